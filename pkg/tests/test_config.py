import pytest

from cndsvne.config import ConfigError, RunConfig, apply_updates, parse_config, render


def test_render_round_trips_every_default():
    text = render(RunConfig())
    assert parse_config(text) == RunConfig()
    for section in ("[substrate]", "[workload]", "[solver]", "[swarm]", "[embedding]"):
        assert section in text


def test_values_comments_and_types():
    cfg = parse_config(
        """
        # desk run
        [substrate]
        nodes = 30   # fewer nodes
        [workload]
        cpu_set = 500, 1000
        [embedding]
        strategy = FIP
        [failures]
        node_failures = 10:3, 20.5:4
        [run]
        seed = 7
        """.replace("        ", "")
    )
    assert cfg.scenario.substrate.nodes == 30
    assert cfg.scenario.workload.cpu_set == (500.0, 1000.0)
    assert cfg.scenario.embedding.strategy == "FIP"
    assert cfg.scenario.failures.node_failures == ((10.0, 3), (20.5, 4))
    assert cfg.run.seed == cfg.scenario.seed == 7
    assert parse_config(render(cfg)) == cfg


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("[nope]\na = 1\n", "unknown section"),
        ("[substrate]\ncolour = red\n", "unknown key"),
        ("[substrate]\nnodes = many\n", "cannot parse"),
        ("[embedding]\nstrategy = greedy\n", "strategy"),
        ("[run]\nverbosity = loud\n", "verbosity"),
        ("[swarm]\nseed = 3\n", "unknown key"),
        ("nodes = 3\n", "header"),
    ],
)
def test_rejections(text, fragment):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert fragment in str(info.value)


def test_apply_updates_validates():
    cfg = apply_updates(RunConfig(), {"solver": {"max_steps": 5}})
    assert cfg.scenario.solver.max_steps == 5
    with pytest.raises(ConfigError):
        apply_updates(RunConfig(), {"solver": {"step_size": 0.0}})
