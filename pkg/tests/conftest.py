import pytest

from xmm.experiment import DataConfig, RunConfig, generate_dataset, load_dataset

SMALL_DATA = DataConfig(seed=3, scenes=120, languages=2, task_scenes=80, task_dev_scenes=20, corpus_sentences=200)


def small_run(data, out, **kw):
    """Minutes-free pipeline config: every phase a handful of steps."""
    run = RunConfig(
        data=str(data), out=str(out), seed=kw.pop("seed", 0),
        model={"num_layers": 1, "hidden": 16, "heads": 2, "ffn_dim": 32, "adapter_reduction": 2,
               "max_text_len": 16, "max_regions": 9, "arch_setting": "S5"},
        phases={"pretrain": {"steps": 30, "adapter_steps": 10, "batch_size": 16, "lr": 1e-3, "vocab_size": 200},
                "extend": {"steps": 10, "batch_size": 16, "lr": 1e-3},
                "task": {"epochs": 1, "batch_size": 32, "lr": 1e-3},
                "fewshot": {"epochs": 1, "batch_size": 16, "lr": 1e-3}},
        split_sizes=[1, 48],
        data_config=dict(vars(SMALL_DATA)),
    )
    for k, v in kw.items():
        setattr(run, k, v)
    return run


@pytest.fixture(scope="session")
def small_data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    generate_dataset(root, SMALL_DATA)
    return root


@pytest.fixture(scope="session")
def small_ds(small_data_dir):
    return load_dataset(small_data_dir)


# one verdict line per acceptance criterion, printed after the run
VERDICTS = {}


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[n])
