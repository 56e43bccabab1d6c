"""Pure-Python set-associative LRU tag array (fallback for the compiled kernel)."""


class LRUCache:
    def __init__(self, num_sets: int, ways: int):
        if num_sets < 1 or ways < 1:
            raise ValueError("num_sets and ways must be >= 1")
        self.num_sets = num_sets
        self.ways = ways
        # each set is ordered LRU -> MRU
        self._sets = [[] for _ in range(num_sets)]

    def set_index(self, block: int) -> int:
        return block % self.num_sets

    def lookup(self, block: int) -> bool:
        s = self._sets[block % self.num_sets]
        if block in s:
            s.remove(block)
            s.append(block)
            return True
        return False

    def contains(self, block: int) -> bool:
        return block in self._sets[block % self.num_sets]

    def insert(self, block: int) -> int:
        s = self._sets[block % self.num_sets]
        if block in s:
            s.remove(block)
            s.append(block)
            return -1
        evicted = s.pop(0) if len(s) >= self.ways else -1
        s.append(block)
        return evicted

    def invalidate(self, block: int) -> bool:
        s = self._sets[block % self.num_sets]
        if block in s:
            s.remove(block)
            return True
        return False

    def set_contents(self, set_idx: int) -> list:
        return list(self._sets[set_idx])

    def occupancy(self) -> int:
        return sum(len(s) for s in self._sets)
