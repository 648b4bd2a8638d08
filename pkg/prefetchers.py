"""L1D and L1I prefetchers.

Every prefetcher is a deterministic state machine: `observe(pc, addr, was_hit)`
trains it on one access and returns line-aligned candidate addresses, at most
`degree` of them. `issue_prefetches` installs candidates into L1 (and L2 on
the way) as instantaneous fills.
"""
import logging
from collections import deque

from models import PrefetcherSpec, ValidationError, from_word, to_word

logger = logging.getLogger(__name__)

CONFIDENCE_MAX = 3


class Prefetcher:
    name = "none"

    def __init__(self, line_size=64, degree=0):
        self.line_size = line_size
        self.shift = line_size.bit_length() - 1
        self.degree = degree

    def observe(self, pc, addr, was_hit):
        return []

    def export_state(self):
        return []

    def import_state(self, words):
        pass


class NextLinePrefetcher(Prefetcher):
    name = "next_line"

    def __init__(self, line_size=64):
        super().__init__(line_size, degree=1)

    def observe(self, pc, addr, was_hit):
        return [((addr >> self.shift) + 1) << self.shift]


class IpStridePrefetcher(Prefetcher):
    """
    Direct-mapped table of per-pc strides indexed by pc bits [2, 2 + log2(table_size)).

    A repeated stride raises a 2-bit confidence; a different stride lowers it,
    and when confidence is already 0 the new stride replaces the old one with
    confidence 1. Once confidence reaches the threshold the prefetcher emits
    addr + stride * i for i = 1..degree. A pc that maps onto an entry owned by
    another pc simply retrains it.
    """

    name = "ip_stride"

    def __init__(self, line_size=64, table_size=256, confidence_threshold=2, degree=1):
        super().__init__(line_size, degree)
        self.table_size = table_size
        self.index_mask = table_size - 1
        self.threshold = confidence_threshold
        self.tags = [None] * table_size
        self.last_addr = [0] * table_size
        self.stride = [0] * table_size
        self.confidence = [0] * table_size

    def entry(self, pc):
        i = (pc >> 2) & self.index_mask
        if self.tags[i] != pc:
            return None
        return {"tag": pc, "last_addr": self.last_addr[i], "stride": self.stride[i],
                "confidence": self.confidence[i]}

    def observe(self, pc, addr, was_hit):
        i = (pc >> 2) & self.index_mask
        if self.tags[i] != pc:
            self.tags[i] = pc
            self.last_addr[i] = addr
            self.stride[i] = 0
            self.confidence[i] = 0
            return []

        delta = addr - self.last_addr[i]
        self.last_addr[i] = addr
        if delta == self.stride[i]:
            if self.confidence[i] < CONFIDENCE_MAX:
                self.confidence[i] += 1
        elif self.confidence[i] > 0:
            self.confidence[i] -= 1
        else:
            self.stride[i] = delta
            self.confidence[i] = 1

        stride = self.stride[i]
        if stride == 0 or self.confidence[i] < self.threshold:
            return []
        shift = self.shift
        out = []
        for k in range(1, self.degree + 1):
            target = addr + stride * k
            if target < 0:
                break
            line_addr = (target >> shift) << shift
            if line_addr not in out:
                out.append(line_addr)
        return out

    def export_state(self):
        words = []
        for i in range(self.table_size):
            tag = self.tags[i]
            words += [0 if tag is None else to_word(tag) + 1, self.last_addr[i],
                      to_word(self.stride[i]), self.confidence[i]]
        return words

    def import_state(self, words):
        for i in range(self.table_size):
            tag, last, stride, conf = words[4 * i:4 * i + 4]
            self.tags[i] = None if tag == 0 else tag - 1
            self.last_addr[i] = last
            self.stride[i] = from_word(stride)
            self.confidence[i] = conf


class StreamPrefetcher(Prefetcher):
    """Detects three consecutive lines among the last `detect_window` distinct lines and runs ahead."""

    name = "stream"

    def __init__(self, line_size=64, detect_window=16, degree=2):
        super().__init__(line_size, degree)
        self.window = deque(maxlen=detect_window)

    def observe(self, pc, addr, was_hit):
        line = addr >> self.shift
        window = self.window
        if line - 1 in window and line - 2 in window:
            direction = 1
        elif line + 1 in window and line + 2 in window:
            direction = -1
        else:
            direction = 0
        if not window or window[-1] != line:
            window.append(line)
        if direction == 0:
            return []
        out = []
        for k in range(1, self.degree + 1):
            target = line + direction * k
            if target < 0:
                break
            out.append(target << self.shift)
        return out

    def export_state(self):
        return [len(self.window)] + list(self.window)

    def import_state(self, words):
        self.window.clear()
        self.window.extend(words[1:1 + words[0]])


class InstructionNextLinePrefetcher(Prefetcher):
    """Observes the fetch stream at line granularity and prefetches the next `degree` lines."""

    name = "i_next_line"

    def __init__(self, line_size=64, degree=1):
        super().__init__(line_size, degree)
        self.last_line = None

    def observe(self, pc, addr, was_hit):
        line = pc >> self.shift
        if line == self.last_line:
            return []
        self.last_line = line
        return [(line + k) << self.shift for k in range(1, self.degree + 1)]

    def export_state(self):
        return [0 if self.last_line is None else self.last_line + 1]

    def import_state(self, words):
        self.last_line = None if words[0] == 0 else words[0] - 1


class InstructionNext2LinePrefetcher(InstructionNextLinePrefetcher):
    name = "i_next_2_line"

    def __init__(self, line_size=64):
        super().__init__(line_size, degree=2)


def make_prefetcher(spec, line_size=64, side="l1d"):
    """Instantiate the prefetcher a PrefetcherSpec (or bare id) names."""
    if isinstance(spec, str):
        spec = PrefetcherSpec(spec)
    spec.validate(side)
    if spec.name == "none":
        return Prefetcher(line_size)
    if spec.name == "next_line":
        return NextLinePrefetcher(line_size)
    if spec.name == "ip_stride":
        return IpStridePrefetcher(line_size, spec.table_size, spec.confidence_threshold, spec.degree)
    if spec.name == "stream":
        return StreamPrefetcher(line_size, spec.detect_window, spec.degree)
    if spec.name == "i_next_line":
        return InstructionNextLinePrefetcher(line_size)
    if spec.name == "i_next_2_line":
        return InstructionNext2LinePrefetcher(line_size)
    raise ValidationError(f"unknown prefetcher {spec.name!r}", side)


def observe_access(prefetcher_state, pc, addr, was_hit):
    return prefetcher_state.observe(pc, addr, was_hit)


def issue_prefetches(candidates, l1, l2, degree=None):
    """
    Install candidate lines into `l1`, probing and filling `l2` on the path.

    The list is capped at `degree`, duplicates are dropped and lines already
    resident in L1 are skipped. Returns the number of L1 fills.
    """
    if degree is not None:
        candidates = candidates[:degree]
    fills = 0
    seen = set()
    l1_shift = l1.offset_bits
    l2_shift = l2.offset_bits
    for addr in candidates:
        line = addr >> l1_shift
        if line in seen:
            continue
        seen.add(line)
        if l1.contains_line(line):
            continue
        l2.access_line(addr >> l2_shift, False)
        l1.access_line(line, False)
        fills += 1
    return fills
