"""Named registries for shapes, pipeline commands and acceptance checks."""

from typing import Any, Callable, Dict, List, Optional


def _summary(obj: Any) -> str:
    doc = (getattr(obj, "__doc__", None) or "").strip()
    return doc.splitlines()[0] if doc else ""


class Registry:
    """Maps names to factories (classes or functions) with a one-line description each."""

    def __init__(self, name: str):
        self.name = name
        self._items: Dict[str, Any] = {}
        self._descriptions: Dict[str, str] = {}

    def register(self, name: str, description: Optional[str] = None) -> Callable:
        """Decorator registering ``obj`` under ``name``.

        The description defaults to the first docstring line.

        Raises:
            ValueError: if ``name`` is already taken by another object
        """
        def decorator(obj: Any) -> Any:
            existing = self._items.get(name)
            if existing is not None and existing is not obj:
                raise ValueError(f"{self.name}: '{name}' is already registered")
            self._items[name] = obj
            self._descriptions[name] = description or _summary(obj)
            return obj
        return decorator

    def get(self, name: str) -> Optional[Any]:
        return self._items.get(name)

    def create(self, name: str, *args, **kwargs) -> Any:
        """Instantiate (or call) a registered entry.

        Raises:
            KeyError: if ``name`` is not registered
        """
        factory = self.get(name)
        if factory is None:
            raise KeyError(f"{self.name}: unknown entry '{name}' (known: {', '.join(self.list())})")
        return factory(*args, **kwargs)

    def list(self) -> List[str]:
        return sorted(self._items)

    def describe(self) -> Dict[str, str]:
        """Name -> description, sorted by name."""
        return {name: self._descriptions[name] for name in self.list()}

    def __contains__(self, name: str) -> bool:
        return name in self._items

    def __len__(self) -> int:
        return len(self._items)


class RegistryManager:
    """Process-wide set of registries, created on first use."""

    def __init__(self):
        self._registries: Dict[str, Registry] = {}

    def create_registry(self, name: str) -> Registry:
        """Create (or return the existing) registry."""
        if name not in self._registries:
            self._registries[name] = Registry(name)
        return self._registries[name]

    def get_registry(self, name: str) -> Optional[Registry]:
        return self._registries.get(name)


_registry_manager: Optional[RegistryManager] = None


def get_registry_manager() -> RegistryManager:
    global _registry_manager
    if _registry_manager is None:
        _registry_manager = RegistryManager()
    return _registry_manager
