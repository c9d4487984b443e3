"""Paragraph-level chunking with content-addressed chunk ids."""

from __future__ import annotations

import hashlib
import re
import unicodedata
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable


class ChunkKind(str, Enum):
    PARAGRAPH = "paragraph"
    CODE_BLOCK = "code_block"
    TABLE = "table"
    LIST = "list"


_CONTROL = re.compile(r"[\x00-\x1f\x7f]")
_LIST_ITEM = re.compile(r"^\s*(?:[-*]|\d+\.)(?:\s|$)")


def _is_fence(line: str) -> bool:
    return line.lstrip().startswith("```")


def _is_table(line: str) -> bool:
    return line.lstrip().startswith("|")


def _is_list(line: str) -> bool:
    return _LIST_ITEM.match(line) is not None


def _blank(line: str) -> bool:
    return not line.strip()


@dataclass(frozen=True)
class RawDocument:
    doc_id: str
    text: str
    source_path: str | None = None

    def __post_init__(self) -> None:
        if not self.doc_id:
            raise ValueError("doc_id must be non-empty")
        if _CONTROL.search(self.doc_id):
            raise ValueError(f"doc_id contains control characters: {self.doc_id!r}")


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    content: str
    normalized: str
    position: int
    kind: ChunkKind = ChunkKind.PARAGRAPH


def split_document(text: str) -> list[tuple[str, ChunkKind]]:
    """Split text into ``(content, kind)`` blocks in document order.

    Paragraphs end at blank lines. Fenced code, ``|`` tables and bullet or
    numbered lists are kept whole even across blank lines.
    """
    lines = text.splitlines()
    out: list[tuple[str, ChunkKind]] = []
    i, n = 0, len(lines)

    def emit(block: list[str], kind: ChunkKind) -> None:
        content = "\n".join(block).strip()
        if content:
            out.append((content, kind))

    def next_nonblank(j: int) -> int:
        while j < n and _blank(lines[j]):
            j += 1
        return j

    while i < n:
        line = lines[i]
        if _blank(line):
            i += 1
            continue

        if _is_fence(line):
            j = i + 1
            while j < n and not _is_fence(lines[j]):
                j += 1
            end = min(j + 1, n)
            emit(lines[i:end], ChunkKind.CODE_BLOCK)
            i = end
            continue

        if _is_table(line):
            j = i
            while j < n:
                if _is_table(lines[j]):
                    j += 1
                    continue
                k = next_nonblank(j)
                if k < n and _is_table(lines[k]):
                    j = k
                    continue
                break
            emit(lines[i:j], ChunkKind.TABLE)
            i = j
            continue

        if _is_list(line):
            j = i + 1
            while j < n:
                cur = lines[j]
                if _is_fence(cur) or _is_table(cur):
                    break
                if not _blank(cur):
                    # list items and lazy continuation lines
                    j += 1
                    continue
                k = next_nonblank(j)
                if k < n and (_is_list(lines[k]) or lines[k][:1].isspace()):
                    j = k
                    continue
                break
            emit(lines[i:j], ChunkKind.LIST)
            i = j
            continue

        j = i + 1
        while j < n:
            cur = lines[j]
            if _blank(cur) or _is_fence(cur) or _is_table(cur) or _is_list(cur):
                break
            j += 1
        emit(lines[i:j], ChunkKind.PARAGRAPH)
        i = j

    return out


def normalize(content: str) -> str:
    """NFC, casefold, collapse whitespace runs to one space, trim."""
    folded = unicodedata.normalize("NFC", content).casefold()
    return " ".join(folded.split())


def hash_chunk(normalized: str) -> str:
    return hashlib.sha256(normalized.encode("utf-8")).hexdigest()


def chunk_document(doc: RawDocument) -> list[Chunk]:
    chunks: list[Chunk] = []
    for content, kind in split_document(doc.text):
        norm = normalize(content)
        if not norm:
            continue
        chunks.append(Chunk(hash_chunk(norm), content, norm, len(chunks), kind))
    return chunks


# Loaders keyed by lowercase file suffix. Register more formats here.
Loader = Callable[[Path], str]


def _read_utf8(path: Path) -> str:
    try:
        return path.read_bytes().decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ValueError(f"{path}: not valid UTF-8 ({exc})") from exc


LOADERS: dict[str, Loader] = {".txt": _read_utf8, ".md": _read_utf8, ".markdown": _read_utf8}


def load_document(path: str | Path, doc_id: str | None = None) -> RawDocument:
    path = Path(path)
    loader = LOADERS.get(path.suffix.lower())
    if loader is None:
        raise ValueError(f"{path}: unsupported document type {path.suffix!r}")
    return RawDocument(doc_id or path.stem, loader(path), str(path))
