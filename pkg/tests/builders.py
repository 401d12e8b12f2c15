"""Small module and container builders shared by the tests."""

from __future__ import annotations

from reconfig import (
    BeanKind,
    BeanType,
    Container,
    InterfaceId,
    ModuleType,
    ReferenceDecl,
    SELF,
    StateField,
    WiringTarget,
)

ICART = InterfaceId("ICart", "cart-v1")
IPRICING = InterfaceId("IPricing")
ICATALOG = InterfaceId("ICatalog")


def cart_bean(*extra_fields: StateField, kind: BeanKind = BeanKind.STATEFUL) -> BeanType:
    return BeanType(
        "Cart",
        kind,
        provides=(ICART,),
        references=(ReferenceDecl("pricingRef", IPRICING), ReferenceDecl("catalogRef", ICATALOG)),
        state_fields=(StateField("count", "int"), StateField("total", "int"), *extra_fields),
    )


def pricing_bean() -> BeanType:
    return BeanType("Pricing", BeanKind.STATELESS, provides=(IPRICING,))


def order_module(name: str = "OrderV1", *extra_fields: StateField) -> ModuleType:
    return ModuleType(name, "1", (cart_bean(*extra_fields), pricing_bean()))


def catalog_module() -> ModuleType:
    return ModuleType("CatalogModule", "1", (BeanType("Catalog", BeanKind.STATELESS, provides=(ICATALOG,)),))


def order_wirings(catalog_dep: str = "catalog") -> dict:
    return {
        ("Cart", "pricingRef"): WiringTarget(SELF, "Pricing", IPRICING),
        ("Cart", "catalogRef"): WiringTarget(catalog_dep, "Catalog", ICATALOG),
    }


def shop(extra_new_fields: tuple[StateField, ...] = (StateField("discount", "int"),)) -> Container:
    """catalog + order1 (OrderV1) started; OrderV2 registered but not deployed."""
    c = Container()
    reg = c.registry
    reg.register(catalog_module())
    reg.register(order_module("OrderV1"))
    reg.register(order_module("OrderV2", *extra_new_fields))
    reg.deploy(reg.module_type("CatalogModule"), deployment_id="catalog")
    reg.deploy(reg.module_type("OrderV1"), wirings=order_wirings(), deployment_id="order1")
    c.start_deployment("catalog")
    c.start_deployment("order1")
    return c
