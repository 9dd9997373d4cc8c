from dataclasses import dataclass, field

from ryushi.doc_parse import cleanup_src, field_docs
from ryushi.experiment import ExperimentConfig


def test_extract_attr_docs():
    @dataclass
    class M:
        a: int = 5  # undocumented
        b: int = field(default=6)
        """b document"""
        c: int = 7
        """long
        long
        c document
        """

    assert field_docs(M) == {"b": "b document", "c": "long\nlong\nc document"}


def test_experiment_docs():
    docs = field_docs(ExperimentConfig)
    assert docs["T"].startswith("Index of the last time step")
    assert "grid_bins" not in docs
    assert "filter_particles" in docs["n"]


def test_cleanup_src():
    assert cleanup_src("    def f():\n        pass") == "def f():\n    pass"
