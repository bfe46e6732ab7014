"""Token vocabulary and masked-prediction training samples.

A trajectory becomes a family of samples: for every index pair i < j the
input sentence is

    [CLS] USER(u) CITY(city) THEME(c_i) POI(p_i) ... THEME(c_{j-1}) POI(p_{j-1}) [MASK] [SEP]

and the label is POI(p_j), giving n(n-1)/2 samples for an n-visit
trajectory.  Special tokens occupy fixed ids 0-4.
"""

from __future__ import annotations

from dataclasses import dataclass

from .ingest import PoiRecord, Trajectory, Visit

MAX_LEN_DEFAULT = 128

CLS, SEP, MASK, PAD, UNK = 0, 1, 2, 3, 4
SPECIAL_TOKENS = ["[CLS]", "[SEP]", "[MASK]", "[PAD]", "[UNK]"]


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class TrainingSample:
    input_ids: tuple[int, ...]
    mask_position: int
    label_id: int


class Vocabulary:
    """Bijection between tokens and contiguous integer ids.

    Token strings are namespaced by kind: ``POI:7``, ``THEME:park``,
    ``CITY:perth``, ``USER:u123``, plus the five specials.
    """

    def __init__(self, tokens: list[str]):
        self.id_to_token = list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(tokens)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise CorpusError("duplicate token in vocabulary")
        self.poi_ids = [
            i for i, t in enumerate(self.id_to_token) if t.startswith("POI:")
        ]

    def __len__(self) -> int:
        return len(self.id_to_token)

    def id_of(self, token: str) -> int:
        """Id of a token, falling back to UNK for unseen payloads."""
        return self.token_to_id.get(token, UNK)

    def poi_token_id(self, poi_id: int) -> int:
        return self.id_of(f"POI:{poi_id}")

    def poi_of_token(self, token_id: int) -> int:
        token = self.id_to_token[token_id]
        if not token.startswith("POI:"):
            raise CorpusError(f"token id {token_id} ({token}) is not a POI token")
        return int(token.split(":", 1)[1])

    def counts_by_kind(self) -> dict[str, int]:
        counts: dict[str, int] = {"SPECIAL": 0, "POI": 0, "THEME": 0, "CITY": 0, "USER": 0}
        for t in self.id_to_token:
            kind = t.split(":", 1)[0] if ":" in t else "SPECIAL"
            counts[kind] += 1
        return counts


def build_vocabulary(train: list[Trajectory], pois: dict[int, PoiRecord]) -> Vocabulary:
    """Deterministic vocabulary over the training set.

    Order: specials, POIs ascending by id, themes lexicographic, cities
    lexicographic, users lexicographic.
    """
    if not train:
        raise CorpusError("cannot build a vocabulary from an empty training set")
    seen_pois: set[int] = set()
    cities: set[str] = set()
    users: set[str] = set()
    for t in train:
        cities.add(t.city)
        users.add(t.user_id)
        seen_pois.update(t.poi_ids)
    unknown = sorted(seen_pois - set(pois))
    if unknown:
        raise CorpusError(f"training trajectories reference uncataloged POIs: {unknown}")
    themes = sorted({pois[p].theme for p in seen_pois})
    tokens = list(SPECIAL_TOKENS)
    tokens += [f"POI:{p}" for p in sorted(seen_pois)]
    tokens += [f"THEME:{th}" for th in themes]
    tokens += [f"CITY:{c}" for c in sorted(cities)]
    tokens += [f"USER:{u}" for u in sorted(users)]
    return Vocabulary(tokens)


def _visit_pair_ids(visit: Visit, pois: dict[int, PoiRecord], vocab: Vocabulary) -> list[int]:
    theme = pois[visit.poi_id].theme if visit.poi_id in pois else ""
    return [vocab.id_of(f"THEME:{theme}"), vocab.poi_token_id(visit.poi_id)]


def generate_training_samples(
    trajectory: Trajectory,
    vocab: Vocabulary,
    pois: dict[int, PoiRecord],
    max_len: int = MAX_LEN_DEFAULT,
    repeat_user_tokens: bool = False,
) -> list[TrainingSample]:
    """All (context -> next POI) masked samples of one trajectory."""
    n = len(trajectory.visits)
    if n < 3:
        raise CorpusError(f"trajectory {trajectory.seq_id} has {n} visits, need >= 3")
    user_id = vocab.id_of(f"USER:{trajectory.user_id}")
    city_id = vocab.id_of(f"CITY:{trajectory.city}")
    samples = []
    for i in range(n - 1):
        for j in range(i + 1, n):
            header = [CLS, user_id, city_id]
            body: list[int] = []
            for v in trajectory.visits[i:j]:
                if repeat_user_tokens and body:
                    body.append(user_id)
                body.extend(_visit_pair_ids(v, pois, vocab))
            tail = [MASK, SEP]
            ids = header + body + tail
            if len(ids) > max_len:
                # drop oldest context, keep CLS/USER/CITY header and the tail
                overflow = len(ids) - max_len
                ids = header + body[overflow:] + tail
            mask_pos = len(ids) - 2
            label = vocab.poi_token_id(trajectory.visits[j].poi_id)
            samples.append(TrainingSample(tuple(ids), mask_pos, label))
    return samples


def encode_prediction_query(
    user_id: str,
    city: str,
    prefix_visits: list[Visit],
    suffix_visits: list[Visit],
    vocab: Vocabulary,
    pois: dict[int, PoiRecord],
    max_len: int = MAX_LEN_DEFAULT,
    repeat_user_tokens: bool = False,
) -> tuple[int, ...]:
    """Masked query: prefix context, one MASK, suffix context.

    Unknown users/cities/POIs encode as UNK so queries on unseen entities
    remain well-formed.
    """
    if not prefix_visits or not suffix_visits:
        raise CorpusError("prediction query needs non-empty prefix and suffix")
    uid = vocab.id_of(f"USER:{user_id}")
    ids = [CLS, uid, vocab.id_of(f"CITY:{city}")]
    for k, v in enumerate(prefix_visits):
        if repeat_user_tokens and k:
            ids.append(uid)
        ids.extend(_visit_pair_ids(v, pois, vocab))
    ids.append(MASK)
    for v in suffix_visits:
        if repeat_user_tokens:
            ids.append(uid)
        ids.extend(_visit_pair_ids(v, pois, vocab))
    ids.append(SEP)
    if len(ids) > max_len:
        overflow = len(ids) - max_len
        mask_pos = ids.index(MASK)
        # drop oldest prefix context pairs, never the MASK
        keep_from = min(3 + overflow, mask_pos)
        ids = ids[:3] + ids[keep_from:]
    return tuple(ids)


def encode_next_poi_query(
    user_id: str,
    city: str,
    context_visits: list[Visit],
    vocab: Vocabulary,
    pois: dict[int, PoiRecord],
    max_len: int = MAX_LEN_DEFAULT,
) -> tuple[int, ...]:
    """Successor query shaped exactly like a training sample: context pairs,
    then MASK, then SEP."""
    if not context_visits:
        raise CorpusError("next-POI query needs a non-empty context")
    ids = [CLS, vocab.id_of(f"USER:{user_id}"), vocab.id_of(f"CITY:{city}")]
    for v in context_visits:
        ids.extend(_visit_pair_ids(v, pois, vocab))
    ids += [MASK, SEP]
    if len(ids) > max_len:
        overflow = len(ids) - max_len
        ids = ids[:3] + ids[3 + overflow :]
    return tuple(ids)


def serialize_samples(samples: list[TrainingSample]) -> str:
    """Line format: space-separated ids, TAB, mask position, TAB, label id."""
    return "".join(
        f"{' '.join(map(str, s.input_ids))}\t{s.mask_position}\t{s.label_id}\n" for s in samples
    )


def deserialize_samples(text: str) -> list[TrainingSample]:
    out = []
    for line in text.splitlines():
        if not line.strip():
            continue
        ids_part, mask_part, label_part = line.split("\t")
        out.append(
            TrainingSample(tuple(int(x) for x in ids_part.split()), int(mask_part), int(label_part))
        )
    return out
