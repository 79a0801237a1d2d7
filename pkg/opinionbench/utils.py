import hashlib
import os
import re
from typing import Any, Iterable, Iterator, List, Sequence, Tuple

import orjson

from .errors import DataFileError

TOKEN_RE = re.compile(r"[a-z0-9]+")
WS_RE = re.compile(r"\s+")


def tokenize(text: str) -> List[str]:
    return TOKEN_RE.findall((text or "").lower())


def normalize_action(text: str) -> str:
    return WS_RE.sub(" ", (text or "").strip().lower())


def prompt_digest(pairs: Iterable[Tuple[str, str]]) -> str:
    h = hashlib.sha256()
    for role, content in pairs:
        h.update(f"{role}:{content}\n".encode("utf-8"))
    return h.hexdigest()


def derive_seed(*parts: int) -> int:
    # 64-bit seed, stable across processes (unlike hash())
    raw = ":".join(str(int(p)) for p in parts).encode("ascii")
    return int.from_bytes(hashlib.sha256(raw).digest()[:8], "big")


def dumps_line(obj: Any) -> bytes:
    return orjson.dumps(obj) + b"\n"


def iter_jsonl(path: str) -> Iterator[Tuple[int, Any]]:
    """Yield (line number, parsed object) for every non-blank line."""
    with open(path, "rb") as f:
        for n, raw in enumerate(f, start=1):
            if not raw.strip():
                continue
            try:
                yield n, orjson.loads(raw)
            except orjson.JSONDecodeError as exc:
                raise DataFileError(n, f"invalid JSON ({exc})") from exc


def write_jsonl(path: str, rows: Sequence[Any]) -> str:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "wb") as f:
        for row in rows:
            f.write(dumps_line(row))
    return path
