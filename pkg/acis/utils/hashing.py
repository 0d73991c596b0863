import hashlib
from typing import BinaryIO


def hash_file(fp: BinaryIO, algo: str = "sha1") -> str:
    if algo not in ("sha1", "sha256"):
        raise NotImplementedError(f"unsupported hash algorithm '{algo}'")

    fp.seek(0)
    h = hashlib.new(algo)
    while chunk := fp.read(1024):
        h.update(chunk)
    fp.seek(0)
    return h.hexdigest()
