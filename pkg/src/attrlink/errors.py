"""Exception types shared across the package.

``DataError`` covers malformed or inconsistent inputs (CLI exit code 2);
``TrainingError`` covers numerical failures during optimisation (exit code 1).
"""


class DataError(ValueError):
    pass


class MissingTokenError(DataError, KeyError):
    """A phrase could not be embedded because some tokens are out of vocabulary."""

    def __init__(self, phrase, missing, suggestions):
        self.phrase = phrase
        self.missing = list(missing)
        self.suggestions = dict(suggestions)
        hints = "; ".join(
            f"{tok!r} (nearest: {', '.join(self.suggestions.get(tok, [])) or 'none'})"
            for tok in self.missing
        )
        super().__init__(f"cannot embed {phrase!r}: missing tokens {hints}")

    def __str__(self):
        # KeyError.__str__ would repr() the message
        return self.args[0]


class TrainingError(RuntimeError):
    pass
