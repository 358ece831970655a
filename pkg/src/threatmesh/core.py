import importlib
import inspect

from threatmesh.contract import Contract


# Map of contract names to their module paths
CONTRACT_MODULES = {
    "threatshare": "threatmesh.ledger.threatshare",
    "mspconfig": "threatmesh.ledger.mspconfig",
    # Add new contracts here
}


def list_available_contracts() -> list[str]:
    """Lists all available, registered contracts."""
    return list(CONTRACT_MODULES.keys())


def make_contract(name: str) -> Contract:
    """
    Creates a contract instance by name. Every peer installs the registered contracts this way.

    Args:
        name: Name of the contract to load (e.g., "threatshare").

    Returns:
        An instance of the contract.
    """
    if name not in CONTRACT_MODULES:
        raise NotImplementedError(
            f"The contract '{name}' does not exist. Available contracts: {list_available_contracts()}"
        )

    try:
        module = importlib.import_module(CONTRACT_MODULES[name])

        contract_class = None
        for _, obj in inspect.getmembers(module):
            if inspect.isclass(obj) and issubclass(obj, Contract) and obj is not Contract and obj.__module__ == module.__name__:
                contract_class = obj
                break

        if contract_class is None:
            raise ImportError(f"No Contract subclass found in {CONTRACT_MODULES[name]}")

        return contract_class()

    except (ImportError, AttributeError) as e:
        raise ImportError(f"Failed to load contract '{name}': {e}") from e


def make(config=None):
    """
    Builds a simulation: CAs, identities, network, peers, orderer, content-store nodes, the channel
    genesis block and published DIDs. This is the main entry point.

    Args:
        config: A ``ScenarioConfig``; defaults to the three-organization scenario.

    Returns:
        A ready :class:`~threatmesh.simulation.Simulation`.
    """
    from threatmesh.simulation import Simulation

    return Simulation(config)
