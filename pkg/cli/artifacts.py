"""
Run-directory layout and deterministic artifact names.

Every artifact is named `<stem>-s<seed>-<digest>` where the digest hashes
the config sections that produced it, upstream sections included, so a
changed setting yields a new file instead of overwriting an old one.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple

from config.run_config import RunConfig
from config.settings import get_config
from core.exceptions import DataError

logger = logging.getLogger(__name__)

# config sections each artifact depends on
LINEAGE: Dict[str, Tuple[str, ...]] = {
    'data': ('data',),
    'teacher': ('data', 'teacher'),
    'client': ('data', 'teacher', 'client', 'search'),
    'two-exit-attached': ('data', 'teacher', 'client', 'search', 'exits'),
    'two-exit': ('data', 'teacher', 'client', 'search', 'exits'),
    'du': ('data', 'teacher', 'client', 'search', 'exits', 'decision'),
    'replay': ('data', 'teacher', 'client', 'search', 'exits'),
    'sweep': ('data', 'teacher', 'client', 'search', 'exits', 'decision', 'cascade'),
}

# which command produces each artifact
PRODUCERS = {
    'data': 'gen-data',
    'teacher': 'train-teacher',
    'client': 'nas-search',
    'two-exit-attached': 'attach-exit',
    'two-exit': 'train-exits',
    'du': 'build-du',
    'replay': 'sweep',
    'sweep': 'sweep',
}


@dataclass
class RunLayout:
    """Resolves artifact paths for one run configuration"""
    cfg: RunConfig
    root: Path

    @classmethod
    def create(cls, cfg: RunConfig, root: Optional[Path] = None) -> "RunLayout":
        run_dir = get_config().run_dir
        layout = cls(cfg=cfg, root=Path(root) if root else run_dir.root)
        for sub in run_dir.subdirs:
            (layout.root / sub).mkdir(parents=True, exist_ok=True)
        return layout

    def _name(self, kind: str, stem: str) -> str:
        return f"{stem}-s{self.cfg.seed}-{self.cfg.section_digest(*LINEAGE[kind])}"

    def split(self, part: str) -> Path:
        return self.root / 'data' / f"{self._name('data', part)}.jsonl"

    def teacher(self) -> Path:
        return self.root / 'models' / f"{self._name('teacher', 'teacher')}.json"

    def client(self) -> Path:
        return self.root / 'models' / f"{self._name('client', 'client')}.json"

    def search_trace(self) -> Path:
        return self.root / 'reports' / f"{self._name('client', 'search-trace')}.jsonl"

    def two_exit(self, trained: bool = True) -> Path:
        kind = 'two-exit' if trained else 'two-exit-attached'
        return self.root / 'models' / f"{self._name(kind, kind)}.json"

    def decision_unit(self, stage: int) -> Path:
        return self.root / 'dus' / f"{self._name('du', f'du{stage}')}.json"

    def du_report(self) -> Path:
        return self.root / 'reports' / f"{self._name('du', 'du-report')}.json"

    def replay(self, part: str = 'test') -> Path:
        return self.root / 'replays' / f"{self._name('replay', part)}.jsonl"

    def sweep(self, two_stage: bool = False) -> Path:
        stem = 'sweep-two-stage' if two_stage else 'sweep'
        return self.root / 'reports' / f"{self._name('sweep', stem)}.csv"

    def reports_dir(self) -> Path:
        return self.root / 'reports'


def require(path: Path, kind: str) -> Path:
    """Fail fast naming the missing artifact and the command that makes it"""
    if not path.exists():
        raise DataError(f"missing artifact {kind}: {path} (run `{PRODUCERS.get(kind, kind)}` first)")
    return path


def should_write(path: Path, force: bool) -> bool:
    """False (with a warning) when the artifact exists and --force is not set"""
    if path.exists() and not force:
        logger.warning(f"{path} exists; skipping (use --force to overwrite)")
        return False
    return True
