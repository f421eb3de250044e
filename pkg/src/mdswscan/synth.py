"""Synthetic registry dumps with a ground-truth answer key.

A recipe fixes the row count and the share of each row kind::

    {"rows": 1000, "samd": 0.1, "simd_kw": 0.2, "ai_kw": 0.05, "seed": 7}

``samd`` rows carry a category-21 classification code, ``simd_kw`` rows carry
a software/hardware keyword in their description or product name, and
``ai_kw`` rows are drawn from those two groups and additionally carry an AI
keyword. Counts are ``floor(rows * share)``; everything else is plain. The
labels are those of the bundled ``paper_default`` pipeline.

Plain and non-AI rows are seeded with traps the pipeline must not fall for:
AI keywords on non-software rows, software keywords in the generic name only,
near-miss spellings, ``21`` in a non-leading code segment, and keywords in
full-width or odd letter case that must still match.
"""

from __future__ import annotations

import json
import random
import zipfile
from collections.abc import Iterator
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any

from .ingest import default_headers
from .pipeline import KeywordLexicon, builtin_paper_pipeline
from ._assets import asset_path
from .text import fold
from .udi import gtin_check_digit

__all__ = ["Recipe", "SynthRow", "answer_key_path", "generate_rows", "read_answer_key", "synthesize_corpus"]

PLAIN, SAMD, SIMD = 0, 1, 2
LABELS = ("samd", "simd", "mdsw", "aimd_candidates")


@dataclass(frozen=True)
class Recipe:
    rows: int
    samd: Fraction = Fraction(0)
    simd_kw: Fraction = Fraction(0)
    ai_kw: Fraction = Fraction(0)
    seed: int = 0
    rows_per_member: int = 1_000_000
    malformed: Fraction = Fraction(0)
    missing_id: Fraction = Fraction(0)
    encoding: str = "utf-8"
    delimiter: str = ","
    extra: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if self.rows < 0:
            raise ValueError("rows must be >= 0")
        for name in ("samd", "simd_kw", "ai_kw", "malformed", "missing_id"):
            share = getattr(self, name)
            if not 0 <= share <= 1:
                raise ValueError(f"{name} must be within [0, 1]")
        if self.samd + self.simd_kw > 1:
            raise ValueError("samd + simd_kw exceeds 1")
        if self.n_ai > self.n_samd + self.n_simd:
            raise ValueError("ai_kw rows must fit inside samd + simd_kw rows")
        if self.rows_per_member < 1:
            raise ValueError("rows_per_member must be positive")

    @classmethod
    def from_doc(cls, doc: dict[str, Any]) -> Recipe:
        known = {"rows", "samd", "simd_kw", "ai_kw", "seed", "rows_per_member",
                 "malformed", "missing_id", "encoding", "delimiter"}
        kwargs: dict[str, Any] = {k: v for k, v in doc.items() if k in known}
        for k in ("samd", "simd_kw", "ai_kw", "malformed", "missing_id"):
            if k in kwargs:
                kwargs[k] = Fraction(str(kwargs[k]))
        kwargs["rows"] = int(doc["rows"])
        return cls(**kwargs, extra={k: v for k, v in doc.items() if k not in known})

    @classmethod
    def load(cls, path: str | Path) -> Recipe:
        with open(path, encoding="utf-8") as fh:
            return cls.from_doc(json.load(fh))

    def _count(self, share: Fraction) -> int:
        return int(share * self.rows)  # floor: shares and rows are non-negative

    @property
    def n_samd(self) -> int:
        return self._count(self.samd)

    @property
    def n_simd(self) -> int:
        return self._count(self.simd_kw)

    @property
    def n_ai(self) -> int:
        return self._count(self.ai_kw)


@dataclass(frozen=True)
class SynthRow:
    values: dict[str, str]  # record field -> raw text as written
    labels: frozenset[str]


# --------------------------------------------------------------------------- vocabulary

_NEUTRAL_CJK = (
    "本产品由主机、探头和电源适配器组成", "适用于临床常规检查", "采用一次性无菌包装",
    "由医用不锈钢材料制成", "经环氧乙烷灭菌", "有效期为三年", "供医疗机构使用",
    "规格型号详见说明书", "产品性能符合行业标准", "用于人体组织的切割与止血",
    "由导管、导丝和连接件组成", "适用于成人患者", "储存于阴凉干燥处", "额定电压为220V",
    "需配合专用耗材使用", "用于伤口护理", "产品以非无菌状态提供", "用于静脉血样本的采集",
    "包含试剂盒与校准品", "可重复使用", "由医用高分子材料注塑成型", "外壳采用阻燃材料",
    "适用于手术室环境", "按照说明书进行清洁消毒", "具有过载保护功能", "附带使用说明书一份",
    "产品不含天然胶乳", "使用前应检查包装完整性", "用于体温的测量", "可调节角度与高度",
    "供专业人员操作", "具备数据存储与打印功能", "具有智能化操作界面", "提供辅助功能菜单",
    "诊断用途需由医师判断", "配备液晶显示屏", "测量结果可导出", "支持无线传输",
)
_NEUTRAL_EN = (
    "single-use sterile device", "made of medical grade stainless steel",
    "for professional use only", "supplied with an instruction manual",
    "powered by a rechargeable battery", "latex free", "store in a cool dry place",
    "compatible with standard luer connectors", "for adult patients",
    "deep-learning curve is short for operators", "artificial limb support strap",
    "intelligence of the design is in its simplicity", "monitoring of temperature during storage",
    "machine housing in aluminium", "neural electrode lead",
)
_PRODUCT_BASES = (
    "医用电子内窥镜", "一次性使用输液器", "电子血压计", "医用超声诊断仪", "数字化X射线摄影系统",
    "心电图机", "手术无影灯", "医用冷藏箱", "输液泵", "呼吸机", "血液透析机", "磁共振成像系统",
    "Portable ultrasound system", "Infusion pump", "Surgical stapler", "Patient monitor",
    "Hearing aid", "Dental implant", "Blood glucose meter", "CT scanner",
)
_GENERIC_BASES = (
    "肺结节CT图像辅助检测", "眼底图像辅助分析", "冠脉CT造影图像处理", "骨折X射线图像辅助检测",
    "心电数据分析", "医学影像存储与传输", "放射治疗计划", "血糖数据管理",
    "Lung Nodule CT Image Auxiliary Detection", "Fundus Image Analysis",
    "Coronary CT Angiography Image Processing", "General Data Viewer",
)
_GENERIC_SUFFIX = ("系统", "装置", "仪", " Software", "软件", "")
_SIMD_TEMPLATES = ("配有{}", "包含{}模块", "{}", "with {}", "搭载{}功能")
_AI_TEMPLATES = ("基于{}算法", "采用{}技术", "using {}", "{}")
_MANUFACTURERS = (
    "北京医疗科技有限公司", "深圳医疗器械股份有限公司", "上海影像技术有限公司", "武汉生物医学工程有限公司",
    "杭州智能医疗有限公司", "天津医用设备有限公司", "Acme Medical Inc.", "Nordic Devices AB",
)
# (registration prefix, address used in the region column)
_DOMESTIC = (
    ("粤械注准", "广东省深圳市南山区科技园"), ("鄂械注准", "湖北省武汉市东湖新技术开发区"),
    ("浙械注准", "浙江省杭州市滨江区"), ("津械注准", "天津市滨海新区"), ("苏械注准", "江苏省苏州市工业园区"),
    ("晋械注准", "山西省太原市小店区"), ("川械注准", "四川省成都市高新区"), ("京械注准", "北京市海淀区"),
)
_NATIONAL_ADDR = ("北京市昌平区生命科学园", "上海市浦东新区张江路", "广东省广州市黄埔区", "江苏省南京市江宁区")
_IMPORTED_ADDR = ("United States, Minneapolis", "Germany, Erlangen", "Japan, Tokyo", "美国加利福尼亚州")
_SAR_ADDR = ("香港特别行政区九龙", "台湾省台北市", "澳门特别行政区")
_FILLER_CODES = tuple(c for c in range(1, 23) if c != 21)


def _width_variants(form: str) -> tuple[str, ...]:
    """The form as written, plus upper/title/full-width spellings of Latin forms."""
    if not form.isascii():
        return (form,)
    full = "".join(chr(ord(c) + 0xFEE0) if "!" <= c <= "~" else "　" if c == " " else c for c in form)
    return (form, form.upper(), form.title(), full)


@dataclass
class _Vocab:
    simd_forms: tuple[str, ...]
    ai_forms: tuple[str, ...]
    simd_keys: frozenset[str]
    ai_keys: frozenset[str]
    neutral: tuple[str, ...]
    simd_segments: tuple[str, ...]
    ai_segments: tuple[str, ...]
    products: tuple[str, ...]
    generics_plain: tuple[str, ...]  # may hold software words, never AI words


def _keyword_sets() -> tuple[tuple[str, ...], tuple[str, ...]]:
    doc = builtin_paper_pipeline()
    lexicon = KeywordLexicon.load(asset_path("paper_default", doc["lexicon"]))
    stages = {s["name"]: s for s in doc["stages"]}
    simd_terms = stages["simd"]["include"]["keyword_any"]["terms"]
    ai_terms = stages["aimd_candidates"]["include"]["keyword_any"]["terms"]
    simd = sorted({f for t in simd_terms for f in lexicon.expand(t)})
    ai = sorted({f for t in ai_terms for f in lexicon.expand(t)})
    return tuple(simd), tuple(ai)


def _hits(text: str, keys: frozenset[str]) -> bool:
    t = fold(text)
    return any(k in t for k in keys)


def _build_vocab() -> _Vocab:
    simd_keys, ai_keys = _keyword_sets()
    sk, ak = frozenset(simd_keys), frozenset(ai_keys)
    # pick the spelling from the original term where one exists, then vary width/case
    simd_forms = tuple(v for f in simd_keys for v in _width_variants(f))
    ai_forms = tuple(v for f in ai_keys for v in _width_variants(f))
    neutral = tuple(p for p in _NEUTRAL_CJK + _NEUTRAL_EN if not _hits(p, sk | ak))
    simd_segments = []
    for tpl in _SIMD_TEMPLATES:
        for f in simd_forms:
            seg = tpl.format(f)
            if not _hits(seg, ak):
                simd_segments.append(seg)
    ai_segments = []
    for tpl in _AI_TEMPLATES:
        for f in ai_forms:
            seg = tpl.format(f)
            if not _hits(seg, sk):
                ai_segments.append(seg)
    products = tuple(p for p in _PRODUCT_BASES if not _hits(p, sk | ak))
    generics = tuple(b + s for b in _GENERIC_BASES for s in _GENERIC_SUFFIX)
    generics_plain = tuple(g for g in generics if not _hits(g, ak))
    return _Vocab(simd_forms, ai_forms, sk, ak, neutral, tuple(simd_segments), tuple(ai_segments),
                  products, generics_plain)


_VOCAB: _Vocab | None = None


def _vocab() -> _Vocab:
    global _VOCAB
    if _VOCAB is None:
        _VOCAB = _build_vocab()
    return _VOCAB


# --------------------------------------------------------------------------- row generation


def _di(i: int) -> str:
    body = f"0694{i:09d}"
    return body + str(gtin_check_digit(body))


def _description(rng: random.Random, v: _Vocab, inserts: list[str]) -> str:
    parts = rng.sample(v.neutral, rng.randint(2, 5)) + inserts
    rng.shuffle(parts)
    sep = "，" if rng.random() < 0.8 else "; "
    text = sep.join(parts)
    if rng.random() < 0.02:
        text += '。注意："勿重复使用"\n详见说明书'
    return text


def _registration(rng: random.Random, category: int) -> tuple[str, str]:
    roll = rng.random()
    year = rng.randint(2015, 2024)
    serial = rng.randint(1, 9999)
    if roll < 0.45:
        return f"国械注准{year}3{category:02d}{serial:04d}", rng.choice(_NATIONAL_ADDR)
    if roll < 0.75:
        prefix, addr = rng.choice(_DOMESTIC)
        return f"{prefix}{year}2{category:02d}{serial:04d}", addr
    if roll < 0.9:
        return f"国械注进{year}{rng.choice('23')}{category:02d}{serial:04d}", rng.choice(_IMPORTED_ADDR)
    if roll < 0.95:
        return f"国械注许{year}{rng.choice('23')}{category:02d}{serial:04d}", rng.choice(_SAR_ADDR)
    # class I filing numbers do not follow the certificate grammar
    prefix, addr = rng.choice(_DOMESTIC)
    return f"{prefix[0]}械备{year}{serial:04d}号", addr


def _code(rng: random.Random, kind: int) -> str:
    a, b = rng.randint(1, 12), rng.randint(1, 9)
    if kind == SAMD:
        roll = rng.random()
        if roll < 0.05:
            return "２１-%02d-%02d" % (a, b)  # full-width digits normalize to 21
        if roll < 0.1:
            return " 21-%02d " % a
        if roll < 0.15:
            return "21"
        return "21-%02d-%02d" % (a, b)
    first = rng.choice(_FILLER_CODES)
    roll = rng.random()
    if roll < 0.05:
        return "%02d-21-%02d" % (first, b)
    if roll < 0.08:
        return "%02d" % first
    return "%02d-%02d-%02d" % (first, a, b)


def generate_rows(recipe: Recipe) -> Iterator[SynthRow]:
    """Rows in output order, each with its ground-truth label set."""
    rng = random.Random(recipe.seed)
    v = _vocab()
    n_samd, n_simd = recipe.n_samd, recipe.n_simd
    kinds = bytearray([SAMD]) * n_samd + bytearray([SIMD]) * n_simd
    kinds += bytearray(recipe.rows - len(kinds))
    rng.shuffle(kinds)
    ai = bytearray(recipe.rows)
    mdsw = [i for i, k in enumerate(kinds) if k != PLAIN]
    for i in rng.sample(mdsw, recipe.n_ai):
        ai[i] = 1
    del mdsw
    missing_id = float(recipe.missing_id)
    for i in range(recipe.rows):
        kind, is_ai = kinds[i], ai[i]
        desc_inserts: list[str] = []
        product = rng.choice(v.products)
        generic = rng.choice(v.generics_plain)
        if kind == SIMD or (kind == SAMD and rng.random() < 0.3):
            seg = rng.choice(v.simd_segments)
            if rng.random() < 0.6:
                desc_inserts.append(seg)
            else:
                product = f"{product}（{seg}）"
        if is_ai:
            seg = rng.choice(v.ai_segments)
            where = rng.random()
            if where < 0.5:
                desc_inserts.append(seg)
            elif where < 0.75:
                product = f"{product}（{seg}）"
            else:
                generic = f"{generic}-{seg}"
        if kind == PLAIN and rng.random() < 0.05:
            # AI wording on a non-software row never makes it a candidate
            desc_inserts.append(rng.choice(v.ai_segments))
        if kind == PLAIN and rng.random() < 0.05:
            generic = f"{generic}-{rng.choice(v.simd_segments)}"  # generic name is not scanned for SiMD
        code = _code(rng, kind)
        category = 21 if kind == SAMD else int(fold(code).strip()[:2])
        regnum, region = _registration(rng, category)
        values = {
            "record_id": _di(i),
            "product_name": product,
            "generic_name": generic,
            "description": _description(rng, v, desc_inserts),
            "classification_code_raw": code,
            "registration_number_raw": regnum,
            "manufacturer": rng.choice(_MANUFACTURERS),
            "region_raw": region,
        }
        if missing_id and rng.random() < missing_id:
            values["record_id"] = ""
        labels = set()
        if kind == SAMD:
            labels = {"samd", "mdsw"}
        elif kind == SIMD:
            labels = {"simd", "mdsw"}
        if is_ai:
            labels.add("aimd_candidates")
        yield SynthRow(values, frozenset(labels))


# --------------------------------------------------------------------------- writing


def _quote(value: str, delimiter: str) -> str:
    if '"' in value or delimiter in value or "\n" in value or "\r" in value:
        return '"' + value.replace('"', '""') + '"'
    return value


def answer_key_path(archive: str | Path) -> Path:
    p = Path(archive)
    return p.with_name(p.name.rsplit(".", 1)[0] + ".answer_key.tsv")


def _filler(rng: random.Random, headers: list[str], bound: set[str]) -> list[tuple[int, str]]:
    values = ("是", "否", "", "GS1", "2024-08-01", "1", "常温保存", "http://udi.nmpa.gov.cn", "0",
              "产品数据来源于注册人", "个", "灭菌包装", "0755-88888888", "service@example.com")
    return [(i, rng.choice(values)) for i, h in enumerate(headers) if h not in bound]


def synthesize_corpus(recipe: Recipe | dict[str, Any], out: str | Path) -> tuple[Path, Path]:
    """Write the archive and its answer key; returns both paths."""
    if not isinstance(recipe, Recipe):
        recipe = Recipe.from_doc(recipe)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(asset_path("default_schema.json"), encoding="utf-8") as fh:
        schema = json.load(fh)
    headers = default_headers()
    binding = schema["column_bindings"]
    col = {f: headers.index(h) for f, h in binding.items()}
    frng = random.Random(recipe.seed ^ 0x5EED)
    fillers = [_filler(frng, headers, set(binding.values())) for _ in range(64)]
    d = recipe.delimiter
    header_line = d.join(_quote(h, d) for h in headers) + "\n"
    n_bad = int(recipe.malformed * recipe.rows)
    bad_at = set(random.Random(recipe.seed + 1).sample(range(max(recipe.rows, 1)), min(n_bad, recipe.rows)))
    key_path = answer_key_path(out)
    width = len(headers)
    with zipfile.ZipFile(out, "w", compression=zipfile.ZIP_DEFLATED, compresslevel=1) as zf, \
            open(key_path, "w", encoding="utf-8", newline="\n") as key:
        key.write("record_id\tlabels\n")
        member = None
        buf: list[str] = []
        line = 0
        name = ""

        def flush() -> None:
            if buf:
                member.write("".join(buf).encode(recipe.encoding))
                buf.clear()

        for i, row in enumerate(generate_rows(recipe)):
            if i % recipe.rows_per_member == 0:
                if member is not None:
                    flush()
                    member.close()
                name = f"UDID_FULL_RELEASE_part{i // recipe.rows_per_member + 1:03d}.csv"
                member = zf.open(zipfile.ZipInfo(name, date_time=(2024, 8, 1, 0, 0, 0)), "w", force_zip64=True)
                buf.append(header_line)
                line = 1
            if i in bad_at:
                buf.append(d.join(["broken"] * (width - 3)) + "\n")
                line += 1
            cells = [""] * width
            for j, val in fillers[i % 64]:
                cells[j] = val
            for f, j in col.items():
                cells[j] = _quote(row.values[f], d)
            text = d.join(cells) + "\n"
            buf.append(text)
            rid = row.values["record_id"] or f"{name}:{line + 1}"
            line += text.count("\n")
            key.write(f"{rid}\t{','.join(l for l in LABELS if l in row.labels)}\n")
            if len(buf) >= 4096:
                flush()
        if member is None:  # zero rows: still a readable dump, header only
            name = "UDID_FULL_RELEASE_part001.csv"
            member = zf.open(zipfile.ZipInfo(name, date_time=(2024, 8, 1, 0, 0, 0)), "w", force_zip64=True)
            buf.append(header_line)
        flush()
        member.close()
    return out, key_path


def read_answer_key(path: str | Path) -> dict[str, frozenset[str]]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            rid, _, labels = line.rstrip("\n").partition("\t")
            out[rid] = frozenset(filter(None, labels.split(",")))
    return out
