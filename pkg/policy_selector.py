import inspect
import logging
from typing import Dict, List, Type

import policies
from dynamics import SystemModel
from exceptions import ConfigurationError
from policies import Policy as _Policy


def _registry() -> Dict[str, Type[_Policy]]:
    """
    Map every registered policy name to its class, discovered from the policies module.
    """
    registry = {}
    for obj in vars(policies).values():
        if inspect.isclass(obj) and issubclass(obj, _Policy) and obj is not _Policy:
            for name in getattr(obj, 'names', ()):
                registry[name] = obj
    return registry


def available_policies() -> List[str]:
    return sorted(_registry())


class PolicySelector:
    """
    Builds polling policies by name for one system model.

    options are forwarded to each policy's build (VoI sample counts, a trained
    network for 'dqn').
    """
    def __init__(self, model: SystemModel, **options):
        self.model = model
        self.options = options

    def select(self, name: str) -> _Policy:
        key = str(name).strip().lower()
        registry = _registry()
        if key not in registry:
            raise ConfigurationError(f"Unknown policy {name!r}; valid options: {', '.join(sorted(registry))}")
        policy = registry[key].build(key, self.model, **self.options)
        logging.info(f"Chosen policy: {policy.label} ({type(policy).__name__})")
        return policy
