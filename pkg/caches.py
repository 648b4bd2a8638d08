"""Set-associative cache model with pluggable replacement policies.

L1 caches always use LRU; the L2 replacement policy is one dimension of the
policy space. Caches work on line numbers internally (address >> offset bits);
`Cache.access` is the address-level entry point.
"""
import logging

import numpy as np

from models import AccessOutcome, CacheGeometry, CacheStats, ValidationError, from_word, to_word

logger = logging.getLogger(__name__)

DEMAND = "demand"
PREFETCH_FILL = "prefetch_fill"

RRPV_MAX = 3
SRRIP_INSERT = 2
BRRIP_LONG_CHANCE = 32
PSEL_BITS = 10
PSEL_MAX = (1 << PSEL_BITS) - 1
PSEL_MID = 1 << (PSEL_BITS - 1)
LEADERS_PER_TEAM = 32

FOLLOWER, SRRIP_LEADER, BRRIP_LEADER = 0, 1, 2


class DrawStream:
    """
    A seeded stream of 64-bit draws backed by numpy's PCG64.

    Draws are pulled from the bit generator in blocks; the position in the
    stream is fully described by (seed, draws consumed), which is what a
    checkpoint stores.
    """

    BLOCK = 1024

    def __init__(self, seed=0):
        self.seed = seed
        self.consumed = 0
        self._bitgen = np.random.PCG64(seed)
        self._buffer = []
        self._pos = 0

    def next(self):
        if self._pos == len(self._buffer):
            self._buffer = self._bitgen.random_raw(self.BLOCK).tolist()
            self._pos = 0
        value = self._buffer[self._pos]
        self._pos += 1
        self.consumed += 1
        return value

    def seek(self, consumed):
        self.consumed = consumed
        self._bitgen = np.random.PCG64(self.seed)
        blocks, self._pos = divmod(consumed, self.BLOCK)
        self._bitgen.advance(blocks * self.BLOCK)
        self._buffer = self._bitgen.random_raw(self.BLOCK).tolist()


class ReplacementPolicy:
    """Per-set metadata plus victim selection; invalid ways are filled before any victim is asked for."""

    name = ""

    def __init__(self, geometry):
        self.sets = geometry.sets
        self.ways = geometry.ways

    def on_hit(self, set_index, way):
        pass

    def on_fill(self, set_index, way):
        pass

    def on_miss(self, set_index):
        pass

    def victim(self, set_index):
        raise NotImplementedError

    def export_state(self):
        return []

    def import_state(self, words):
        pass


class LRUPolicy(ReplacementPolicy):
    name = "lru"

    def __init__(self, geometry):
        super().__init__(geometry)
        self.clock = 0
        self.stamps = [[0] * self.ways for _ in range(self.sets)]

    def on_hit(self, set_index, way):
        self.clock += 1
        self.stamps[set_index][way] = self.clock

    on_fill = on_hit

    def victim(self, set_index):
        row = self.stamps[set_index]
        return row.index(min(row))

    def export_state(self):
        return [self.clock] + [stamp for row in self.stamps for stamp in row]

    def import_state(self, words):
        self.clock = words[0]
        flat = words[1:]
        self.stamps = [list(flat[s * self.ways:(s + 1) * self.ways]) for s in range(self.sets)]


class FIFOPolicy(LRUPolicy):
    """Insertion order only; hits leave the order unchanged."""

    name = "fifo"

    def on_hit(self, set_index, way):
        pass

    def on_fill(self, set_index, way):
        self.clock += 1
        self.stamps[set_index][way] = self.clock


class RandomPolicy(ReplacementPolicy):
    name = "random"

    def __init__(self, geometry, seed=0):
        super().__init__(geometry)
        self.stream = DrawStream(seed)

    def victim(self, set_index):
        return self.stream.next() % self.ways

    def export_state(self):
        return [self.stream.consumed]

    def import_state(self, words):
        self.stream.seek(words[0])


class SRRIPPolicy(ReplacementPolicy):
    """2-bit re-reference interval prediction: insert at 2, promote to 0, evict the first way at 3."""

    name = "srrip"

    def __init__(self, geometry):
        super().__init__(geometry)
        self.rrpv = [[RRPV_MAX] * self.ways for _ in range(self.sets)]

    def on_hit(self, set_index, way):
        self.rrpv[set_index][way] = 0

    def insertion_rrpv(self, set_index):
        return SRRIP_INSERT

    def on_fill(self, set_index, way):
        self.rrpv[set_index][way] = self.insertion_rrpv(set_index)

    def victim(self, set_index):
        row = self.rrpv[set_index]
        oldest = max(row)
        if oldest < RRPV_MAX:
            # aging every line until one reaches RRPV_MAX
            bump = RRPV_MAX - oldest
            row[:] = [value + bump for value in row]
        return row.index(RRPV_MAX)

    def export_state(self):
        return [value for row in self.rrpv for value in row]

    def import_state(self, words):
        self.rrpv = [list(words[s * self.ways:(s + 1) * self.ways]) for s in range(self.sets)]


class DRRIPPolicy(SRRIPPolicy):
    """
    Set-dueling between SRRIP and BRRIP insertion.

    With leaders = min(32, sets // 2) and stride = sets // leaders, set s is an
    SRRIP leader when s % stride == 0 and a BRRIP leader when
    s % stride == stride - 1. A demand miss in an SRRIP leader raises PSEL, a
    miss in a BRRIP leader lowers it; PSEL saturates at [0, 1023] and starts at
    512. Followers insert like BRRIP while PSEL > 512 and like SRRIP otherwise.
    BRRIP inserts at RRPV 3, or at 2 once in 32 draws of the seeded stream.
    """

    name = "drrip"

    def __init__(self, geometry, seed=0):
        super().__init__(geometry)
        self.psel = PSEL_MID
        self.stream = DrawStream(seed)
        self.leader_kind = leader_assignment(self.sets)

    def duel_update(self, set_index, hit):
        if not hit:
            kind = self.leader_kind[set_index]
            if kind == SRRIP_LEADER:
                if self.psel < PSEL_MAX:
                    self.psel += 1
            elif kind == BRRIP_LEADER:
                if self.psel > 0:
                    self.psel -= 1
        return self.psel

    def on_miss(self, set_index):
        self.duel_update(set_index, False)

    def uses_brrip(self, set_index):
        kind = self.leader_kind[set_index]
        if kind == FOLLOWER:
            return self.psel > PSEL_MID
        return kind == BRRIP_LEADER

    def insertion_rrpv(self, set_index):
        if self.uses_brrip(set_index):
            return SRRIP_INSERT if self.stream.next() % BRRIP_LONG_CHANCE == 0 else RRPV_MAX
        return SRRIP_INSERT

    def export_state(self):
        return [self.psel, self.stream.consumed] + super().export_state()

    def import_state(self, words):
        self.psel = words[0]
        self.stream.seek(words[1])
        super().import_state(words[2:])


def leader_assignment(sets):
    kinds = [FOLLOWER] * sets
    leaders = min(LEADERS_PER_TEAM, sets // 2)
    if leaders == 0:
        return kinds
    stride = sets // leaders
    for s in range(sets):
        if s % stride == 0:
            kinds[s] = SRRIP_LEADER
        elif s % stride == stride - 1:
            kinds[s] = BRRIP_LEADER
    return kinds


def make_policy(spec, geometry):
    """Build the replacement policy object for a ReplacementSpec (or a bare policy name)."""
    name = getattr(spec, "name", spec)
    seed = getattr(spec, "seed", 0)
    if name == "lru":
        return LRUPolicy(geometry)
    if name == "fifo":
        return FIFOPolicy(geometry)
    if name == "random":
        return RandomPolicy(geometry, seed)
    if name == "srrip":
        return SRRIPPolicy(geometry)
    if name == "drrip":
        return DRRIPPolicy(geometry, seed)
    raise ValidationError(f"unknown replacement policy {name!r}", "l2")


class Cache:
    """
    A set-associative cache.

    Attributes:
        name (str): Label used in logs and statistics ("l1d", "l2", ...).
        geometry (CacheGeometry): Sets, ways and line size.
        policy (ReplacementPolicy): Replacement metadata and victim choice.
        stats (CacheStats): Demand counters plus prefetch fill/hit counters.

    Methods:
        access(addr, access_class): Address-level lookup returning AccessOutcome.
        access_line(line, demand): Line-level lookup, returns (hit, victim_line).
        contains_line(line): Residency check without side effects.
    """

    def __init__(self, name, geometry, policy="lru"):
        geometry.validate(name)
        self.name = name
        self.geometry = geometry
        self.offset_bits = geometry.offset_bits
        self.set_bits = geometry.set_bits
        self.set_mask = geometry.sets - 1
        if isinstance(policy, ReplacementPolicy):
            self.policy = policy
        else:
            self.policy = make_policy(policy, geometry)
        self.tags = [[None] * geometry.ways for _ in range(geometry.sets)]
        self.lookup = [{} for _ in range(geometry.sets)]
        self.prefetched = set()
        self.stats = CacheStats()

    def line_of(self, addr):
        return addr >> self.offset_bits

    def contains_line(self, line):
        return (line >> self.set_bits) in self.lookup[line & self.set_mask]

    def access(self, addr, access_class=DEMAND):
        hit, victim = self.access_line(addr >> self.offset_bits, access_class == DEMAND)
        return AccessOutcome(hit, None if victim is None else victim << self.offset_bits)

    def access_line(self, line, demand=True):
        set_index = line & self.set_mask
        tag = line >> self.set_bits
        where = self.lookup[set_index]
        way = where.get(tag)
        stats = self.stats
        if way is not None:
            if demand:
                stats.accesses += 1
                stats.hits += 1
                if line in self.prefetched:
                    self.prefetched.discard(line)
                    stats.prefetch_hits += 1
                self.policy.on_hit(set_index, way)
            return True, None

        if demand:
            stats.accesses += 1
            stats.misses += 1
            self.policy.on_miss(set_index)
        else:
            stats.prefetch_fills += 1
            self.prefetched.add(line)

        victim = None
        row = self.tags[set_index]
        try:
            way = row.index(None)
        except ValueError:
            way = self.policy.victim(set_index)
            old_tag = row[way]
            del where[old_tag]
            victim = (old_tag << self.set_bits) | set_index
            self.prefetched.discard(victim)
            stats.evictions += 1
        row[way] = tag
        where[tag] = way
        self.policy.on_fill(set_index, way)
        return False, victim

    def resident_lines(self, set_index):
        return sorted((tag << self.set_bits) | set_index for tag in self.lookup[set_index])

    def export_state(self):
        """Flatten contents, counters and policy metadata into unsigned 64-bit words."""
        words = [0 if tag is None else to_word(tag) + 1 for row in self.tags for tag in row]
        words += list(self.stats.as_tuple())
        words.append(len(self.prefetched))
        words += sorted(self.prefetched)
        words += self.policy.export_state()
        return words

    def import_state(self, words):
        ways = self.geometry.ways
        count = self.geometry.sets * ways
        cells = words[:count]
        self.tags = [[None if w == 0 else from_word(w - 1) for w in cells[s * ways:(s + 1) * ways]]
                     for s in range(self.geometry.sets)]
        self.lookup = [{tag: way for way, tag in enumerate(row) if tag is not None} for row in self.tags]
        pos = count
        self.stats = CacheStats(*words[pos:pos + 6])
        pos += 6
        pending = words[pos]
        self.prefetched = set(words[pos + 1:pos + 1 + pending])
        self.policy.import_state(words[pos + 1 + pending:])

    def __repr__(self):
        g = self.geometry
        return f"Cache({self.name}, {g.sets}x{g.ways}x{g.line_size}, {self.policy.name})"


def cache_access(state, addr, access_class=DEMAND):
    return state.access(addr, access_class)


def drrip_duel_update(state, set_index, outcome):
    """Feed one access outcome to a DRRIP cache (or policy) and return the new PSEL."""
    policy = state.policy if isinstance(state, Cache) else state
    if not isinstance(policy, DRRIPPolicy):
        raise ValidationError("set-dueling needs a drrip replacement policy", "l2")
    hit = outcome.hit if isinstance(outcome, AccessOutcome) else bool(outcome)
    return policy.duel_update(set_index, hit)


def lru_reference_hits(access_sequence, geometry: CacheGeometry):
    """
    Count LRU hits through per-set stack distances.

    Stack distance here is 1-based: the most recently used line of a set has
    distance 1. An access hits iff its line's distance is <= ways. Used as an
    independent check on the simulator's LRU policy.
    """
    stacks = [[] for _ in range(geometry.sets)]
    mask = geometry.sets - 1
    hits = 0
    for addr in access_sequence:
        line = addr >> geometry.offset_bits
        stack = stacks[line & mask]
        try:
            index = stack.index(line)
        except ValueError:
            stack.append(line)
            continue
        if len(stack) - index <= geometry.ways:
            hits += 1
        del stack[index]
        stack.append(line)
    return hits
