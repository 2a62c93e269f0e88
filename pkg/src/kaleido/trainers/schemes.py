"""Parameter sharing schemes and how each one wires the agent networks."""
from __future__ import annotations

from dataclasses import dataclass

from ..envs import EnvSpec
from ..networks import MaskedMLP


@dataclass(frozen=True)
class SchemeSpec:
    name: str
    independent: bool = False  # one parameter copy per agent
    mask_kind: str | None = None
    id_input: bool = False
    diversity: bool = False
    resets: bool = False
    masked_critic: bool = False

    @property
    def critic_diversity(self) -> bool:
        return self.masked_critic and self.name != "kaleido_no_reg"

    @property
    def critic_resets(self) -> bool:
        return self.masked_critic and self.name != "kaleido_no_reset"


SCHEMES = {
    "nops": SchemeSpec("nops", independent=True),
    "fups": SchemeSpec("fups"),
    "fups_id": SchemeSpec("fups_id", id_input=True),
    "kaleidoscope": SchemeSpec("kaleidoscope", mask_kind="weight", diversity=True, resets=True,
                               masked_critic=True),
    "kaleido_fixed_mask": SchemeSpec("kaleido_fixed_mask", mask_kind="fixed", masked_critic=True),
    "kaleido_neuron_mask": SchemeSpec("kaleido_neuron_mask", mask_kind="neuron", diversity=True,
                                      resets=True, masked_critic=True),
    "kaleido_no_reg": SchemeSpec("kaleido_no_reg", mask_kind="weight", resets=True, masked_critic=True),
    "kaleido_no_reset": SchemeSpec("kaleido_no_reset", mask_kind="weight", diversity=True,
                                   masked_critic=True),
    "kaleido_no_ce": SchemeSpec("kaleido_no_ce", mask_kind="weight", diversity=True, resets=True),
}

# accepted in configs so comparisons can name them, not built here
STUB_SCHEMES = ("seps", "multih")


def scheme_spec(name: str) -> SchemeSpec:
    if name in STUB_SCHEMES:
        raise NotImplementedError(f"scheme {name!r} is a configuration stub only")
    try:
        return SCHEMES[name]
    except KeyError:
        raise ValueError(f"unknown scheme {name!r}; choose from {sorted(SCHEMES)}") from None


@dataclass
class Wiring:
    spec: SchemeSpec
    agent: MaskedMLP
    critic: MaskedMLP | None = None


def build_scheme(scheme: str, env_spec: EnvSpec, hidden: int, n_layers: int = 3,
                 mode: str = "soft", out_act: str | None = None,
                 critic_members: int | None = None) -> Wiring:
    """Agent (and optionally critic) networks for ``scheme``.

    ``critic_members`` requests a centralized critic: K members sharing one
    masked parameter set under Kaleidoscope-style schemes, otherwise two
    independent critics.
    """
    spec = scheme_spec(scheme)
    n = env_spec.n_agents
    in_dim = env_spec.obs_dim + (n if spec.id_input else 0)
    dims = [in_dim] + [hidden] * (n_layers - 1) + [env_spec.n_actions]
    agent = MaskedMLP("agent.", dims, owners=n, groups=n if spec.independent else 1,
                      mask_kind=spec.mask_kind, mode=mode, out_act=out_act)
    critic = None
    if critic_members is not None:
        cin = env_spec.state_dim + n * env_spec.n_actions
        cdims = [cin] + [hidden] * (n_layers - 1) + [1]
        if spec.masked_critic:
            critic = MaskedMLP("critic.", cdims, owners=critic_members, mask_kind="weight",
                               mode=mode, layer_norm=True)
        else:
            critic = MaskedMLP("critic.", cdims, owners=2, groups=2, layer_norm=True)
    return Wiring(spec, agent, critic)
