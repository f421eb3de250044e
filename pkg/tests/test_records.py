from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mdswscan._assets import asset_path, read_table
from mdswscan.errors import MalformedCode, MalformedRegistration, OriginUndetermined, UnknownClassDigit
from mdswscan.records import (
    ClassificationCode,
    DeviceClass,
    DeviceRecord,
    Origin,
    RegistrationNumber,
    format_registration_number,
    is_samd_code,
    origin_of,
    parse_classification_code,
    parse_registration_number,
)


class TestClassificationCode:
    @pytest.mark.parametrize(
        "raw, segments",
        [("21-01-01", (21, 1, 1)), ("21", (21,)), ("06-01", (6, 1)), ("  21-02 ", (21, 2)), ("２１-０１", (21, 1))],
    )
    def test_parses(self, raw, segments):
        assert parse_classification_code(raw).segments == segments

    @pytest.mark.parametrize("raw", ["2A-01", "", "21-01-01-01", "210101", "2-01", "21--01", "21-1"])
    def test_rejects(self, raw):
        with pytest.raises(MalformedCode):
            parse_classification_code(raw)

    def test_samd_rule(self):
        assert is_samd_code(ClassificationCode((21, 1, 1)))
        assert not is_samd_code(ClassificationCode((6, 1)))
        assert is_samd_code(ClassificationCode((21,)))

    @given(st.integers(0, 99), st.lists(st.integers(0, 99), max_size=2), st.lists(st.integers(0, 99), max_size=2))
    def test_samd_depends_only_on_first_segment(self, head, tail_a, tail_b):
        a = ClassificationCode((head, *tail_a))
        b = ClassificationCode((head, *tail_b))
        assert is_samd_code(a) == is_samd_code(b) == (head == 21)

    @given(st.lists(st.integers(0, 99), min_size=1, max_size=3))
    def test_round_trip(self, segments):
        text = "-".join(f"{s:02d}" for s in segments)
        assert parse_classification_code(text).segments == tuple(segments)
        assert str(parse_classification_code(text)) == text


class TestRegistrationNumber:
    def test_national_example(self):
        reg = parse_registration_number("国械注准20153211878")
        assert (reg.origin, reg.issuer, reg.year, reg.device_class, reg.category, reg.serial) == (
            Origin.DOMESTIC, "National", 2015, DeviceClass.III, 21, 1878
        )

    def test_romanized_form_matches(self):
        assert parse_registration_number("National20153211878") == parse_registration_number("国械注准20153211878")

    def test_imported(self):
        reg = parse_registration_number("国械注进20243061234")
        assert (reg.origin, reg.year, reg.device_class, reg.category, reg.serial) == (
            Origin.IMPORTED, 2024, DeviceClass.III, 6, 1234
        )

    def test_province(self):
        reg = parse_registration_number("粤械注准20242071111")
        assert (reg.origin, reg.issuer, reg.year, reg.device_class, reg.category, reg.serial) == (
            Origin.DOMESTIC, "Guangdong", 2024, DeviceClass.II, 7, 1111
        )

    def test_sar(self):
        assert parse_registration_number("国械注许20203211234").origin is Origin.SAR

    def test_legacy_form(self):
        reg = parse_registration_number("国食药监械(准)字2013第3210001号")
        assert (reg.year, reg.device_class, reg.category, reg.serial) == (2013, DeviceClass.III, 21, 1)

    def test_full_width_digits(self):
        assert parse_registration_number("国械注准２０１５３２１１８７８").serial == 1878

    @pytest.mark.parametrize("raw", ["", "国械注准2015", "XX械注准20153211878", "国械注准2015321187a", "国械注准1815321187"])
    def test_malformed(self, raw):
        with pytest.raises(MalformedRegistration):
            parse_registration_number(raw)

    def test_unknown_class_digit(self):
        with pytest.raises(UnknownClassDigit):
            parse_registration_number("国械注准20154211878")

    def test_class_order(self):
        assert DeviceClass.I < DeviceClass.II < DeviceClass.III


def _issuers():
    rows = read_table(str(asset_path("registration_prefixes.csv")))
    return sorted({(Origin(r["origin"]), r["issuer"]) for r in rows})


REGS = st.builds(
    lambda oi, year, cls, cat, serial: RegistrationNumber(oi[0], oi[1], year, cls, cat, serial),
    st.sampled_from(_issuers()),
    st.integers(1980, 2100),
    st.sampled_from(list(DeviceClass)),
    st.integers(0, 99),
    st.integers(0, 10**7),
)


@given(REGS)
@settings(max_examples=1000)
def test_registration_round_trip(reg):
    assert parse_registration_number(format_registration_number(reg)) == reg


class TestOrigin:
    def test_imported_by_number(self):
        o = origin_of(DeviceRecord("x", registration_number_raw="国械注进20243061234"))
        assert o.origin is Origin.IMPORTED and not o.fallback

    def test_sar_by_number(self):
        o = origin_of(DeviceRecord("x", registration_number_raw="国械注许20203211234"))
        assert (o.origin, o.region) == (Origin.SAR, "Xu")

    def test_fallback_is_flagged(self):
        o = origin_of(DeviceRecord("x", registration_number_raw="粤械备20190727号", region_raw="广东省深圳市"))
        assert (o.origin, o.region, o.fallback) == (Origin.DOMESTIC, "Guangdong", True)

    def test_fallback_sar_and_foreign(self):
        assert origin_of(DeviceRecord("x", region_raw="香港")).origin is Origin.SAR
        assert origin_of(DeviceRecord("x", region_raw="Germany")).origin is Origin.IMPORTED

    def test_undetermined(self):
        with pytest.raises(OriginUndetermined):
            origin_of(DeviceRecord("x"))


class TestDeviceRecord:
    def test_normalized_on_construction(self):
        r = DeviceRecord("ｘ１", description="ＳＯＦＴＷＡＲＥ")
        assert r.record_id == "x1" and r.description == "SOFTWARE"

    def test_record_id_required(self):
        with pytest.raises(ValueError):
            DeviceRecord("  ")

    def test_exclusion_key(self):
        assert DeviceRecord("id", registration_number_raw="国械注准20153211878").exclusion_key == "国械注准20153211878"
        assert DeviceRecord("id").exclusion_key == "id"
