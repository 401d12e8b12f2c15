import pytest

from reconfig import BeanKind, BeanType, InterfaceId, ModuleType, StateField
from reconfig.compat import check_compat, counterpart, match_fields
from reconfig.errors import AmbiguousCounterpart, NoCounterpartBean

from builders import cart_bean, pricing_bean, shop
from compat_fixtures import FIXTURES, check_fixture


@pytest.mark.parametrize("name", FIXTURES)
def test_each_fixture_names_exactly_its_restriction(name):
    expected, _ = FIXTURES[name]
    report = check_fixture(name)
    assert report.violated == expected, report.render()


def test_clean_report_carries_field_plan():
    report = check_fixture("clean")
    assert report.passed
    assert report.field_match_plan == {"Svc": [("a", "int"), ("b", "string")]}
    assert report.referenced == {"Svc": ["ISvc@v1"]}


def test_check_is_read_only():
    c = shop()
    c.open_session("alice", "order1", "Cart", "ICart", "cart")
    before = c.snapshot()
    trace_len = len(c.trace)
    check_compat(c, "order1", "OrderV2")
    assert c.snapshot() == before and len(c.trace) == trace_len


def test_sessions_count_as_references():
    c = shop()
    assert check_compat(c, "order1", "OrderV2").referenced == {}
    c.open_session("alice", "order1", "Cart", "ICart", "cart")
    assert check_compat(c, "order1", "OrderV2").referenced == {"Cart": ["ICart@cart-v1"]}


def test_changed_field_type_is_a_note_not_a_violation():
    c = shop()
    cart = cart_bean()
    fields = (StateField("count", "string"), StateField("total", "int"))
    c.registry.register(ModuleType("OrderV3", "3", (
        BeanType("Cart", BeanKind.STATEFUL, cart.provides, cart.references, (), fields), pricing_bean())))
    c.open_session("alice", "order1", "Cart", "ICart", "cart")
    report = check_compat(c, "order1", "OrderV3")
    assert report.passed
    assert report.field_match_plan == {"Cart": [("total", "int")]}
    assert any("count" in note for note in report.notes)


def bean(name, *ifaces, kind=BeanKind.STATELESS):
    return BeanType(name, kind, tuple(InterfaceId(i) for i in ifaces))


def test_counterpart_tie_breaks():
    old = bean("Svc", "IA", "IB")
    new = ModuleType("N", "1", (bean("X", "IA"), bean("Y", "IA", "IB")))
    assert counterpart(old, new, {"IA"}).name == "Y"
    new = ModuleType("N", "1", (bean("Svc", "IA"), bean("Other", "IA")))
    assert counterpart(bean("Svc", "IA"), new).name == "Svc"
    with pytest.raises(AmbiguousCounterpart):
        counterpart(bean("Svc", "IA"), ModuleType("N", "1", (bean("P", "IA"), bean("Q", "IA"))))
    with pytest.raises(NoCounterpartBean):
        counterpart(old, ModuleType("N", "1", (bean("P", "IC"),)))


def test_match_fields_keeps_old_order():
    old = BeanType("S", BeanKind.STATEFUL, state_fields=(StateField("z", "int"), StateField("a", "bool"), StateField("m", "int")))
    new = BeanType("S", BeanKind.STATEFUL, state_fields=(StateField("a", "bool"), StateField("m", "string"), StateField("z", "int")))
    assert match_fields(old, new) == [("z", "int"), ("a", "bool")]
