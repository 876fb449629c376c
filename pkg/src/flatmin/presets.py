"""Named presets: landscapes, datasets, and default optimizer hyperparameters."""

from __future__ import annotations

from .errors import ContractViolationError
from .landscapes import LandscapeSpec, WellSpec
from .mlp import make_blobs
from .optim import AdamHyperParams, MIAdamHyperParams

# Defaults shared by the image-classification style experiments.
ADAM_DEFAULTS = dict(
    alpha=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8, weight_decay=5e-5
)
# Grid-searched MIAdam extras for training runs (switch given in epochs there).
MIADAM_KAPPA_DEFAULT = 0.98
MIADAM_SWITCH_EPOCHS_DEFAULT = 20
# Landscape-simulation MIAdam extras (switch in steps, 1500-step runs).
SIMULATION_KAPPA = 0.885
SIMULATION_SWITCH_STEP = 1400
SIMULATION_TOTAL_STEPS = 1500


def landscape_a() -> LandscapeSpec:
    """One wide flat well flanked by two narrow deep wells."""
    return LandscapeSpec(
        wells=(
            WellSpec(center=(-1.0, -1.0), depth=2.0, width=0.18),
            WellSpec(center=(0.5, 0.5), depth=2.5, width=1.3),
            WellSpec(center=(2.0, 2.0), depth=2.0, width=0.18),
        )
    )


def landscape_b() -> LandscapeSpec:
    """Checkerboard of sharp and flat wells covering [-2, 3]^2."""
    wells = []
    coords = (-1.5, 0.5, 2.5)
    for i, x in enumerate(coords):
        for j, y in enumerate(coords):
            if (i + j) % 2 == 0:
                wells.append(WellSpec(center=(x, y), depth=1.5, width=0.15))
            else:
                wells.append(WellSpec(center=(x, y), depth=1.0, width=0.8))
    return LandscapeSpec(wells=tuple(wells))


LANDSCAPE_PRESETS = {
    "landscape-A": landscape_a,
    "landscape-B": landscape_b,
}


def blobs_4c(seed: int = 0):
    return make_blobs(classes=4, per_class=500, spread=1.0, seed=seed)


DATASET_PRESETS = {
    "blobs-4c": blobs_4c,
}


def default_adam() -> AdamHyperParams:
    return AdamHyperParams(**ADAM_DEFAULTS)


def default_miadam(order_n: int = 1, switch_step: int = 1) -> MIAdamHyperParams:
    return MIAdamHyperParams(
        adam=default_adam(),
        order_n=order_n,
        kappa=MIADAM_KAPPA_DEFAULT,
        switch_step=switch_step,
    )


def get_landscape(name: str) -> LandscapeSpec:
    try:
        return LANDSCAPE_PRESETS[name]()
    except KeyError:
        raise ContractViolationError(f"unknown landscape preset {name!r}") from None


def list_presets() -> list[dict]:
    """Names, kinds, and descriptions of every shipped preset."""
    return [
        {
            "name": "landscape-A",
            "kind": "landscape",
            "description": "one wide flat well between two narrow deep wells",
            "values": {"wells": 3},
        },
        {
            "name": "landscape-B",
            "kind": "landscape",
            "description": "3x3 checkerboard of sharp and flat wells over [-2,3]^2",
            "values": {"wells": 9},
        },
        {
            "name": "blobs-4c",
            "kind": "dataset",
            "description": "4-class Gaussian blobs, 500 points per class, 20 features",
            "values": {"classes": 4, "per_class": 500, "spread": 1.0, "n_features": 20},
        },
        {
            "name": "table-defaults",
            "kind": "optimizer",
            "description": "training defaults: Adam base plus kappa=0.98, switch at 20 epochs",
            "values": {
                **ADAM_DEFAULTS,
                "kappa": MIADAM_KAPPA_DEFAULT,
                "switch_epochs": MIADAM_SWITCH_EPOCHS_DEFAULT,
            },
        },
        {
            "name": "simulation-defaults",
            "kind": "optimizer",
            "description": "landscape-simulation extras: kappa=0.885, switch at step 1400 of 1500",
            "values": {
                **ADAM_DEFAULTS,
                "kappa": SIMULATION_KAPPA,
                "switch_step": SIMULATION_SWITCH_STEP,
                "total_steps": SIMULATION_TOTAL_STEPS,
            },
        },
    ]
