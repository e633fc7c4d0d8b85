"""Item metadata and the descriptor providers used to name and embed segments."""

from __future__ import annotations

import json
import logging
import os
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
import pandas as pd

from compressed_elsa.config import get_settings
from compressed_elsa.errors import DataFormatError, SegmentationError
from compressed_elsa.linalg import NORM_EPS

try:
    from openai import OpenAI  # type: ignore
except Exception:  # pragma: no cover - optional dependency
    OpenAI = None

_logger = logging.getLogger(__name__)

DESCRIPTOR_TOKENS = 5
_TOKEN = re.compile(r"[a-z0-9]+")
_TAG_SPLIT = re.compile(r"[|;]")


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


@dataclass(frozen=True)
class ItemMetadata:
    """Titles and tags keyed by dense item index."""

    titles: dict[int, str] = field(default_factory=dict)
    tags: dict[int, list[str]] = field(default_factory=dict)

    def tokens(self, item: int) -> list[str]:
        tags = self.tags.get(item)
        if tags:
            return [token for tag in tags for token in tokenize(tag)]
        return tokenize(self.titles.get(item, ""))

    def vocabulary(self) -> list[str]:
        items = set(self.titles) | set(self.tags)
        return sorted({token for item in items for token in self.tokens(item)})


def load_item_metadata(
    path: str | Path, item_vocab: dict[str, int] | None = None, delimiter: str = ","
) -> ItemMetadata:
    """Read ``item_id,title,tags`` rows; tags are separated by '|' or ';'.

    With ``item_vocab`` the raw ids are mapped to dense indices and unknown
    ids are dropped; without it ``item_id`` must already be a dense index.
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path, sep=delimiter, dtype=str, keep_default_na=False)
    except (pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise DataFormatError(f"{path}: {exc}") from exc
    missing = {"item_id", "title"} - set(frame.columns)
    if missing:
        raise DataFormatError(f"{path}: missing column(s) {sorted(missing)}")

    titles: dict[int, str] = {}
    tags: dict[int, list[str]] = {}
    unknown = 0
    for line, row in enumerate(frame.itertuples(index=False), start=2):
        raw = str(row.item_id).strip()
        if item_vocab is not None:
            if raw not in item_vocab:
                unknown += 1
                continue
            item = item_vocab[raw]
        else:
            try:
                item = int(raw)
            except ValueError as exc:
                raise DataFormatError(f"{path}:{line}: item_id '{raw}' is not an index") from exc
        titles[item] = str(row.title)
        tag_text = str(getattr(row, "tags", "") or "")
        tags[item] = [tag.strip() for tag in _TAG_SPLIT.split(tag_text) if tag.strip()]
    if unknown:
        _logger.debug("skipped %d metadata rows for items outside the vocabulary", unknown)
    return ItemMetadata(titles=titles, tags=tags)


class DescriptorProvider(Protocol):
    def describe(self, members: Sequence[int], metadata: ItemMetadata | None) -> str | None:
        """Short text for a group of items, or None when the provider cannot describe it."""

    def embed(self, text: str) -> np.ndarray:
        """Unit-norm vector for ``text``."""


def unit(vector: np.ndarray) -> np.ndarray:
    vector = np.asarray(vector, dtype=np.float64)
    norm = float(np.linalg.norm(vector))
    return vector / norm if norm > NORM_EPS else np.zeros_like(vector)


class MetadataDescriptorProvider:
    """Offline provider: the most frequent member tokens, embedded as term frequencies."""

    def __init__(self, metadata: ItemMetadata, max_tokens: int = DESCRIPTOR_TOKENS) -> None:
        self.metadata = metadata
        self.max_tokens = max_tokens
        self.vocabulary = metadata.vocabulary()
        self._positions = {token: i for i, token in enumerate(self.vocabulary)}

    def describe(self, members: Sequence[int], metadata: ItemMetadata | None = None) -> str | None:
        source = metadata or self.metadata
        counts = Counter(token for item in members for token in source.tokens(int(item)))
        if not counts:
            return None
        ranked = sorted(counts.items(), key=lambda pair: (-pair[1], pair[0]))
        return " ".join(token for token, _ in ranked[: self.max_tokens])

    def embed(self, text: str) -> np.ndarray:
        vector = np.zeros(max(len(self.vocabulary), 1), dtype=np.float64)
        for token in tokenize(text):
            position = self._positions.get(token)
            if position is not None:
                vector[position] += 1.0
        return unit(vector)


class LLMDescriptorProvider:
    """Chat-completion descriptors and API embeddings, with the metadata provider as fallback.

    Without an API key or the ``openai`` package every call goes to the
    fallback. Once the remote API is in use, failures raise
    :class:`SegmentationError` so embeddings never mix vector spaces.
    """

    def __init__(self, fallback: MetadataDescriptorProvider, enable: bool = True, sample: int = 20) -> None:
        self.fallback = fallback
        self.sample = sample
        settings = get_settings()
        api_key = os.getenv(settings.llm_api_key_env, "").strip()
        self._settings = settings
        self._client = None
        if enable and api_key and OpenAI is not None:
            self._client = OpenAI(api_key=api_key, base_url=settings.llm_base_url)
        else:
            _logger.info("LLM descriptors unavailable; using metadata descriptors")

    @property
    def remote(self) -> bool:
        return self._client is not None

    def describe(self, members: Sequence[int], metadata: ItemMetadata | None = None) -> str | None:
        if self._client is None:
            return self.fallback.describe(members, metadata)
        source = metadata or self.fallback.metadata
        titles = [source.titles.get(int(item), str(item)) for item in list(members)[: self.sample]]
        prompt = {
            "task": "Name the common theme of these catalogue items in at most six words.",
            "items": titles,
            "constraints": ["Return only the name.", "No quotes."],
        }
        try:
            response = self._client.chat.completions.create(
                model=self._settings.llm_model,
                temperature=0.0,
                messages=[
                    {"role": "system", "content": "You write short catalogue segment names."},
                    {"role": "user", "content": json.dumps(prompt)},
                ],
            )
            content = (response.choices[0].message.content or "").strip()
        except Exception as exc:
            raise SegmentationError(f"descriptor request failed: {exc}") from exc
        return content or None

    def embed(self, text: str) -> np.ndarray:
        if self._client is None:
            return self.fallback.embed(text)
        try:
            response = self._client.embeddings.create(model=self._settings.embedding_model, input=text)
            return unit(np.asarray(response.data[0].embedding, dtype=np.float64))
        except Exception as exc:
            raise SegmentationError(f"embedding request failed: {exc}") from exc
