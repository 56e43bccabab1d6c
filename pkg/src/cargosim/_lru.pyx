# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled set-associative LRU tag array."""

from libc.stdlib cimport malloc, free


cdef class LRUCache:
    cdef readonly int num_sets
    cdef readonly int ways
    cdef long long *tags
    cdef unsigned long long *stamps
    cdef unsigned long long clock

    def __cinit__(self, int num_sets, int ways):
        if num_sets < 1 or ways < 1:
            raise ValueError("num_sets and ways must be >= 1")
        self.num_sets = num_sets
        self.ways = ways
        self.tags = <long long *> malloc(num_sets * ways * sizeof(long long))
        self.stamps = <unsigned long long *> malloc(num_sets * ways * sizeof(unsigned long long))
        if self.tags == NULL or self.stamps == NULL:
            raise MemoryError()
        cdef int i
        for i in range(num_sets * ways):
            self.tags[i] = -1
            self.stamps[i] = 0
        self.clock = 0

    def __dealloc__(self):
        free(self.tags)
        free(self.stamps)

    cpdef int set_index(self, long long block):
        return <int> (block % self.num_sets)

    cdef inline int _find(self, long long block, int base):
        cdef int w
        for w in range(self.ways):
            if self.tags[base + w] == block:
                return base + w
        return -1

    cpdef bint lookup(self, long long block):
        cdef int base = self.set_index(block) * self.ways
        cdef int i = self._find(block, base)
        if i < 0:
            return False
        self.clock += 1
        self.stamps[i] = self.clock
        return True

    cpdef bint contains(self, long long block):
        return self._find(block, self.set_index(block) * self.ways) >= 0

    cpdef long long insert(self, long long block):
        cdef int base = self.set_index(block) * self.ways
        cdef int i = self._find(block, base)
        cdef int w, victim
        cdef long long evicted = -1
        self.clock += 1
        if i >= 0:
            self.stamps[i] = self.clock
            return -1
        victim = base
        for w in range(self.ways):
            if self.tags[base + w] == -1:
                victim = base + w
                break
            if self.stamps[base + w] < self.stamps[victim]:
                victim = base + w
        evicted = self.tags[victim]
        self.tags[victim] = block
        self.stamps[victim] = self.clock
        return evicted

    cpdef bint invalidate(self, long long block):
        cdef int i = self._find(block, self.set_index(block) * self.ways)
        if i < 0:
            return False
        self.tags[i] = -1
        self.stamps[i] = 0
        return True

    def set_contents(self, int set_idx):
        """Blocks of one set ordered least- to most-recently used."""
        cdef int base = set_idx * self.ways
        cdef int w
        live = [(self.stamps[base + w], self.tags[base + w])
                for w in range(self.ways) if self.tags[base + w] != -1]
        live.sort()
        return [t for _, t in live]

    def occupancy(self):
        cdef int i
        cdef long n = 0
        for i in range(self.num_sets * self.ways):
            if self.tags[i] != -1:
                n += 1
        return n
