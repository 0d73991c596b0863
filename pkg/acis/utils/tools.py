from typing import Iterable, List, Tuple, Union

from slugify import slugify


def parse_overrides(raw: Union[str, Iterable[str], None]) -> List[Tuple[str, str]]:
    """
    Parse --set values into (key, value) pairs.
    Items are comma separated; an item without "=" continues the previous value, so
    `arch.encoder_channels=4,8,seed=3` yields [("arch.encoder_channels", "4,8"), ("seed", "3")].
    """
    if raw is None:
        return []

    chunks = [raw] if isinstance(raw, str) else [str(chunk) for chunk in raw]
    items = [item.strip() for chunk in chunks for item in chunk.split(",")]

    pairs: List[List[str]] = []
    for item in items:
        if not item:
            continue
        if "=" in item:
            key, value = item.split("=", 1)
            if not key.strip():
                raise ValueError(f"override '{item}' has no key")
            pairs.append([key.strip(), value.strip()])
            continue
        if not pairs:
            raise ValueError(f"override '{item}' is not of the form key=value")
        pairs[-1][1] = f"{pairs[-1][1]},{item}"

    return [(key, value) for key, value in pairs]


def run_slug(name: str) -> str:
    """File-system safe name for runs and variants, e.g. AC-Dice-NoKL -> ac-dice-nokl."""
    return slugify(name) or "run"
