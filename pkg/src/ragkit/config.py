"""Pipeline configuration: a JSON file of nested sections, overridable
from the command line with dotted ``--set section.key=value`` flags.

Unknown keys are rejected by name and every value is type-checked
against the defaults table, so typos fail loudly before any stage runs.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    pass


# Section -> key -> default. None means "no default, optional"; the
# paths section and the seed are validated separately because several
# of them are required for most commands.
DEFAULTS: dict[str, dict[str, Any]] = {
    "paths": {"corpus": None, "qa": None, "qrels": None, "workdir": None},
    "split": {"train": None, "val": None, "test": None},
    "bm25": {"k1": 1.5, "b": 0.75, "epsilon": 0.25, "top_k": 100},
    "scorer": {
        "mode": "mock",
        "base_url": "",
        "model": "",
        "api_key_env": "RAGKIT_API_KEY",
        "timeout_s": 30.0,
        "max_in_flight": 4,
        "retries": 3,
        "cache_path": None,
    },
    "template": {
        "passage_label": "DOCUMENT",
        "score_ordering": "passage_question_instruction",
        "score_instruction": None,
        "qa_instruction": None,
    },
    "weaklabel": {"hard_negatives": 10, "multi_answer": "max"},
    "two_tower": {
        "batch_size": 32,
        "learning_rate": 0.001,
        "epochs": 10,
        "alpha": 20.0,
        "dim": 64,
        "vocab_size": 65536,
        "oov_buckets": 1,
        "max_query_tokens": 32,
        "max_passage_tokens": 180,
        "weight_decay": 0.0,
        "separate_towers": False,
        "redraw_duplicate_batches": False,
    },
    "late_interaction": {
        "batch_size": 16,
        "learning_rate": 0.001,
        "epochs": 3,
        "hard_negatives": 4,
        "dim": 64,
        "vocab_size": 65536,
        "oov_buckets": 1,
        "max_query_tokens": 32,
        "max_passage_tokens": 180,
        "weight_decay": 0.0,
    },
    "qa": {"retriever": "two-tower", "top_n": 1, "max_tokens": 20},
    "synthetic": {"questions": 200, "passages": 5000},
}


@dataclass
class PipelineConfig:
    seed: int
    sections: dict[str, dict[str, Any]] = field(default_factory=dict)

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.sections[section]

    def path(self, name: str) -> Path:
        value = self.sections["paths"][name]
        if not value:
            raise ConfigError(f"paths.{name} is required but not set")
        return Path(value)

    def workdir(self) -> Path:
        return self.path("workdir")


def _check_type(section: str, key: str, value: Any, default: Any) -> Any:
    if value is None or default is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{section}.{key}: expected true/false, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{section}.{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{section}.{key}: expected an integer, got {value!r}")
        return value
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{section}.{key}: expected a string, got {value!r}")
        return value
    return value


def parse_config(path: str | Path | None = None, overrides: list[str] | None = None) -> PipelineConfig:
    """Resolve file values and overrides onto the defaults table.

    `overrides` entries look like ``two_tower.alpha=10`` or ``seed=13``;
    values parse as JSON first and fall back to bare strings. Overrides
    win over the file, the file wins over defaults.
    """
    sections = copy.deepcopy(DEFAULTS)
    seed: int | None = None

    def apply(section: str, key: str, value: Any, where: str) -> None:
        nonlocal seed
        if section == "":
            if key != "seed":
                raise ConfigError(f"{where}: unknown top-level key {key!r}")
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{where}: seed must be an integer, got {value!r}")
            seed = value
            return
        if section not in sections:
            raise ConfigError(f"{where}: unknown section {section!r}")
        if key not in sections[section]:
            raise ConfigError(f"{where}: unknown key {section}.{key}")
        sections[section][key] = _check_type(section, key, value, DEFAULTS[section][key])

    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text(encoding="utf-8") or "{}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be an object")
        for section_name, body in raw.items():
            if section_name == "seed":
                apply("", "seed", body, str(path))
                continue
            if not isinstance(body, dict):
                raise ConfigError(f"{path}: section {section_name!r} must be an object")
            for key, value in body.items():
                apply(section_name, key, value, str(path))

    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        dotted, text = item.split("=", 1)
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        if "." in dotted:
            section, key = dotted.split(".", 1)
        else:
            section, key = "", dotted
        apply(section, key, value, f"--set {item}")

    if seed is None:
        raise ConfigError("seed is required (top-level 'seed' in the config or --set seed=N)")
    return PipelineConfig(seed=seed, sections=sections)


def split_sizes(config: PipelineConfig, n_pairs: int) -> tuple[int, int, int]:
    """Explicit split sizes, or a 60/20/20 split of whatever is available."""
    s = config.sections["split"]
    if s["train"] is not None and s["val"] is not None and s["test"] is not None:
        return (s["train"], s["val"], s["test"])
    if any(v is not None for v in s.values()):
        raise ConfigError("set all of split.train/split.val/split.test or none")
    train = int(n_pairs * 0.6)
    val = int(n_pairs * 0.2)
    return (train, val, n_pairs - train - val)
