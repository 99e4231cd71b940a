import sys

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib


def load_toml(path) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def loads_toml(text: str) -> dict:
    return tomllib.loads(text)


TOMLDecodeError = tomllib.TOMLDecodeError
