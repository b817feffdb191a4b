"""Cheap configurations for exercising every CLI verb end to end."""

_COMMON = """
[model]
hidden = [8]

[episodes]
query = 5

[training]
iterations = 6
eval_every = 3
val_episodes = 4
eval_steps = 2
finetune_eval_steps = 3

[universe]
pool = 40
"""

CONFIGS = {
    "toy": 'kind = "toy"\n[toy]\nscenario = "b"\nT = 3\nmeta_iterations = 50\n',
    "train": 'kind = "train"\n[algorithm]\nvariant = "reptile"\n' + _COMMON,
    "ablate-head": 'kind = "ablate-head"\n[ablation]\nepisodes = 4\nsteps = 3\n' + _COMMON,
    "sweep-k": 'kind = "sweep-k"\n[sweep]\nk_train = [1, 3]\nalgorithms = ["fomaml"]\nruns = 2\ntest_episodes = 3\n'
    + _COMMON,
    "joint-acc": 'kind = "joint-acc"\n[joint]\nepochs = 2\nuniverse = "shifted"\n' + _COMMON,
    "correlate": 'kind = "correlate"\n[correlate]\ncapacities = [[4], [6]]\nruns = 3\ntest_episodes = 3\njoint_epochs = 1\n'
    + _COMMON,
}

OUTPUTS = {
    "toy": ["toy.csv", "toy_density.csv"],
    "train": ["checkpoint.bin", "history.csv"],
    "eval": ["eval.csv"],
    "ablate-head": ["ablation.csv", "ablation_plot.csv"],
    "sweep-k": ["sweep.csv"],
    "joint-acc": ["joint.csv"],
    "correlate": ["correlate.csv", "correlate_runs.csv", "correlate_plot.csv"],
}


def eval_config(checkpoint) -> str:
    return f'kind = "eval"\n[eval]\ncheckpoint = "{checkpoint}"\nepisodes = 5\n' + _COMMON
