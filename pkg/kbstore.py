"""
Knowledge Base Store

Loads, validates and serves the entity catalog that mentions are linked
against. The catalog is a JSON-lines file with one entity per line:

    {"id": "e1", "name": "Lumier", "description": "...", "industry": "software"}

``industry`` is optional and only used by synthetic validation. Two entities
may share a display name; lookups by name always return a list of ids.
"""

import json
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

from logger_setup import logger


class KBFormatError(ValueError):
    """A line of the entities file could not be parsed."""


class DuplicateEntityError(ValueError):
    """Two records of the entities file share the same id."""

    def __init__(self, entity_id, line_number=None):
        self.entity_id = entity_id
        where = f" (line {line_number})" if line_number is not None else ""
        super().__init__(f"Duplicate entity id {entity_id!r}{where}")


@dataclass(frozen=True)
class Entity:
    id: str
    name: str
    description: str = ""
    industry: Optional[str] = None


@dataclass(frozen=True)
class KnowledgeBase:
    """
    Immutable entity catalog.

    ``index`` maps the display name to the ids carrying it, in catalog order.
    ``normalized_index`` does the same for the joined normalized name and is
    what weak labeling uses to detect name collisions.
    """
    entities: Tuple[Entity, ...]
    index: Dict[str, List[str]] = field(default_factory=dict)
    normalized_index: Dict[str, List[str]] = field(default_factory=dict)
    _by_id: Dict[str, Entity] = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.entities)

    def __iter__(self):
        return iter(self.entities)

    def by_name(self, name: str) -> List[str]:
        return list(self.index.get(name, []))

    def by_normalized_name(self, joined: str) -> List[str]:
        return list(self.normalized_index.get(joined, []))

    @property
    def ids(self) -> List[str]:
        return [entity.id for entity in self.entities]


def build_kb(entities: Iterable[Entity]) -> KnowledgeBase:
    """
    Build a KnowledgeBase from entities, validating ids and names.

    Raises:
        DuplicateEntityError: If two entities share an id.
        KBFormatError: If an entity has an empty id or name.
    """
    # Imported here to keep kbstore loadable without the text utilities at import time
    from textprep import DegenerateInputError, normalize_name

    ordered = []
    by_id = {}
    index: Dict[str, List[str]] = {}
    normalized_index: Dict[str, List[str]] = {}

    for entity in entities:
        if not entity.id:
            raise KBFormatError("Entity with empty id")
        if not entity.name:
            raise KBFormatError(f"Entity {entity.id!r} has an empty name")
        if entity.id in by_id:
            raise DuplicateEntityError(entity.id)
        by_id[entity.id] = entity
        ordered.append(entity)
        index.setdefault(entity.name, []).append(entity.id)
        try:
            joined = normalize_name(entity.name).joined
        except DegenerateInputError:
            logger.warning(f"Entity {entity.id!r} name {entity.name!r} is empty after normalization")
            continue
        normalized_index.setdefault(joined, []).append(entity.id)

    return KnowledgeBase(
        entities=tuple(ordered),
        index=index,
        normalized_index=normalized_index,
        _by_id=by_id,
    )


def _parse_record(line: str, line_number: int) -> Entity:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as e:
        raise KBFormatError(f"Line {line_number}: invalid JSON ({e.msg})") from e
    if not isinstance(record, dict):
        raise KBFormatError(f"Line {line_number}: expected an object")

    entity_id = record.get('id')
    name = record.get('name')
    if not isinstance(entity_id, str) or not entity_id:
        raise KBFormatError(f"Line {line_number}: missing or empty 'id'")
    if not isinstance(name, str) or not name:
        raise KBFormatError(f"Line {line_number}: missing or empty 'name'")

    description = record.get('description') or ""
    industry = record.get('industry')
    if not isinstance(description, str):
        raise KBFormatError(f"Line {line_number}: 'description' must be a string")
    if industry is not None and not isinstance(industry, str):
        raise KBFormatError(f"Line {line_number}: 'industry' must be a string")
    return Entity(id=entity_id, name=name, description=description, industry=industry or None)


def load_kb(path) -> KnowledgeBase:
    """
    Load the entities file.

    Args:
        path: Path to a UTF-8 JSON-lines entities file. Blank lines are ignored.

    Returns:
        KnowledgeBase: All records, in file order.

    Raises:
        KBFormatError: On a malformed or non-UTF-8 line (message carries the line number).
        DuplicateEntityError: On a repeated id (message carries the id).
    """
    entities = []
    seen = set()
    with open(path, 'rb') as f:
        for line_number, raw in enumerate(f, start=1):
            try:
                line = raw.decode('utf-8')
            except UnicodeDecodeError as e:
                raise KBFormatError(f"Line {line_number}: invalid UTF-8 at byte {e.start}") from e
            if not line.strip():
                continue
            entity = _parse_record(line, line_number)
            if entity.id in seen:
                raise DuplicateEntityError(entity.id, line_number)
            seen.add(entity.id)
            entities.append(entity)

    kb = build_kb(entities)
    logger.info(f"Loaded {len(kb)} entities from {path}")
    return kb


def save_kb(kb: KnowledgeBase, path) -> None:
    """Write the KB back out in the entities file format."""
    with open(path, 'w', encoding='utf-8') as f:
        for entity in kb.entities:
            record = {'id': entity.id, 'name': entity.name, 'description': entity.description}
            if entity.industry is not None:
                record['industry'] = entity.industry
            f.write(json.dumps(record, ensure_ascii=False) + '\n')


def get_entity(kb: KnowledgeBase, entity_id: str) -> Optional[Entity]:
    """Return the entity with this id, or None when absent."""
    return kb._by_id.get(entity_id)
