import hashlib
import json
import os
from collections import OrderedDict
from typing import Any, Iterable, List

import numpy as np


class common:

    @staticmethod
    def stable_hash(text: str) -> int:
        """Process-independent 63-bit hash (the builtin `hash` of a str is salted per interpreter)."""
        digest = hashlib.sha256(text.encode('utf-8')).digest()
        return int.from_bytes(digest[:8], 'little') >> 1

    @staticmethod
    def derive_seed(*entropy: int) -> int:
        return int(np.random.SeedSequence([int(e) for e in entropy]).generate_state(1, dtype=np.uint64)[0] >> 1)

    @staticmethod
    def derive_rng(*entropy: int) -> np.random.Generator:
        return np.random.default_rng([int(e) for e in entropy])

    @staticmethod
    def split_evenly(total: int, parts: int) -> List[int]:
        """`total` split into `parts` counts differing by at most one; the remainder goes to the first parts."""
        if parts <= 0:
            raise ValueError('Cannot split into {} parts.'.format(parts))
        base, remainder = divmod(total, parts)
        return [base + (1 if i < remainder else 0) for i in range(parts)]

    @staticmethod
    def load_json(path: str) -> Any:
        with open(path, 'r') as file:
            return json.load(file)

    @staticmethod
    def save_json(obj: Any, path: str):
        common.ensure_parent_dir(path)
        with open(path, 'w') as file:
            json.dump(obj, file, indent=2, sort_keys=True)
            file.write('\n')

    @staticmethod
    def ensure_parent_dir(path: str):
        parent_dir = os.path.dirname(path)
        if parent_dir and not os.path.isdir(parent_dir):
            os.makedirs(parent_dir, exist_ok=True)

    @staticmethod
    def scene_name(map_path: str) -> str:
        return os.path.splitext(os.path.basename(map_path))[0]

    @staticmethod
    def get_unique_list(lst: Iterable) -> list:
        return list(OrderedDict(((item, 0) for item in lst)).keys())
