# salprop/edge_source.py
"""
Edge-map backends for the detect and train commands.

An EMAP file (or a directory of ``<image stem>.emap`` files) supplies
precomputed boundary maps. Without one the built-in oriented-gradient
detector runs instead; the switch is announced once through
``fallback_message``.

Public API:
    - make_edge_source(path: str | None) -> BaseEdgeSource
    - BaseEdgeSource.edge_map_for(image_path) -> EdgeMap | None
"""

import logging
import os
import threading
from pathlib import Path
from typing import Dict, Optional

from .common import fallback_message
from .edges import EdgeMap, read_edge_map

logger = logging.getLogger(__name__)

EMAP_SUFFIX = ".emap"


class BaseEdgeSource:
    """Base class for edge sources with a record of where each map came from."""

    def __init__(self) -> None:
        self._origin: Dict[str, str] = {}
        self._lock = threading.Lock()

    def _remember(self, image_path: os.PathLike, origin: str) -> None:
        with self._lock:
            self._origin[Path(image_path).stem] = origin

    def origin(self, image_id: str) -> Optional[str]:
        """Where the map of ``image_id`` came from ("builtin" or an EMAP path)."""
        return self._origin.get(image_id)

    def edge_map_for(self, image_path: os.PathLike) -> Optional[EdgeMap]:
        raise NotImplementedError

    @property
    def is_builtin(self) -> bool:
        return False


class BuiltinEdgeSource(BaseEdgeSource):
    """No precomputed maps: the pipeline runs the built-in detector on every image."""

    def edge_map_for(self, image_path: os.PathLike) -> Optional[EdgeMap]:
        self._remember(image_path, "builtin")
        return None

    @property
    def is_builtin(self) -> bool:
        return True


class FileEdgeSource(BaseEdgeSource):
    """
    EMAP files on disk.

    ``path`` is either one EMAP file, used for every image, or a directory
    holding ``<stem>.emap`` per image. An image without its own file in the
    directory falls back to the built-in detector.
    """

    def __init__(self, path: os.PathLike) -> None:
        super().__init__()
        self.path = Path(path)
        if not self.path.exists():
            raise FileNotFoundError(f"edge map not found: {self.path}")
        # Holds at most the shared single-file map; per-image maps are read on demand.
        self._cache: Dict[Path, EdgeMap] = {}

    @property
    def is_single_file(self) -> bool:
        return self.path.is_file()

    def _load_shared(self) -> EdgeMap:
        with self._lock:
            cached = self._cache.get(self.path)
        if cached is None:
            cached = read_edge_map(self.path)
            with self._lock:
                cached = self._cache.setdefault(self.path, cached)
        return cached

    def edge_map_for(self, image_path: os.PathLike) -> Optional[EdgeMap]:
        if self.is_single_file:
            self._remember(image_path, str(self.path))
            return self._load_shared()
        target = self.path / f"{Path(image_path).stem}{EMAP_SUFFIX}"
        if not target.is_file():
            fallback_message("Edge map", f"{target.name} missing", "the built-in detector")
            self._remember(image_path, "builtin")
            return None
        logger.debug("edge map for %s: %s", Path(image_path).name, target)
        self._remember(image_path, str(target))
        return read_edge_map(target)


def make_edge_source(path: Optional[os.PathLike] = None) -> BaseEdgeSource:
    """
    File-backed source when ``path`` is given, the built-in detector otherwise.

    Raises
    ------
    FileNotFoundError
        If ``path`` is given but does not exist.
    """
    if path is None:
        fallback_message("Edge map", "no EMAP given", "the built-in oriented-gradient detector")
        return BuiltinEdgeSource()
    return FileEdgeSource(path)
