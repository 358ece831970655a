from threatmesh.core import make, list_available_contracts
