import importlib.util
from pathlib import Path

from regpinn.nn import PenaltyKind

SCRIPT = Path(__file__).parent.parent / "scripts" / "reproduce_tables.py"


def load_script():
    spec = importlib.util.spec_from_file_location("reproduce_tables", SCRIPT)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def test_network_entries_cover_every_variant():
    entries = load_script().network_entries(seed=3)
    assert set(entries) == {
        "nn", "nn-l1", "nn-l2", "nn-elastic",
        "regpinn-shue", "regpinn-overfit", "regpinn-shue-l1", "regpinn-shue-l2", "regpinn-shue-elastic",
    }
    assert all(config.seed == 3 for config in entries.values())
    assert not any(entries[name].regularized for name in ("nn", "nn-l1", "nn-l2", "nn-elastic"))
    assert entries["regpinn-overfit"].regularizer.model_id == "overfit"
    assert entries["regpinn-shue-elastic"].regularizer.model_id == "shue"
    assert entries["regpinn-shue-elastic"].penalty == PenaltyKind("elastic", 1e-4, 0.5)
    assert entries["nn-l1"].penalty.kind == "l1"
