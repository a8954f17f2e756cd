from dataclasses import dataclass


@dataclass(frozen=True)
class Command:
    name: str
    description: str
    handler: str
