"""Error taxonomy: bad inputs exit 2, unexpected failures exit 3."""


class ExtractorError(Exception):
    """Configuration, word-source, or input problem the user can fix."""

    def to_json_dict(self) -> dict:
        return {"error": type(self).__name__, "message": str(self)}
