from decimal import Decimal

import pytest

from opinionbench.housesim import gen_house_tasks
from opinionbench.models import (
    HouseEpisode,
    HouseTask,
    ObjectSpec,
    Product,
    ReceptacleSpec,
    ShoppingGoal,
    WorldSpec,
)
from opinionbench.shopsim import Catalog, gen_catalog, gen_goals, save_catalog, save_goals
from opinionbench.housesim import save_house_tasks


@pytest.fixture(scope="session")
def catalog() -> Catalog:
    return gen_catalog(seed=7, n=50)


@pytest.fixture(scope="session")
def shop_goals(catalog):
    return gen_goals(catalog, seed=11, n=10)


@pytest.fixture(scope="session")
def house_episodes():
    return gen_house_tasks(seed=5, n=12)


@pytest.fixture
def ottoman() -> Product:
    return Product(
        id="B09NXP95GC",
        title="Qtqhome Storage Ottoman, Faux Leather",
        description="Storage ottoman by Qtqhome.",
        features="folding; faux leather",
        reviews="Good value.",
        price=Decimal("139.42"),
        options={"color": ["black", "pink"], "size": ["40x40x40cm", "60x40x40cm"]},
        attributes=("folding", "faux leather"),
        product_type="storage ottoman",
    )


@pytest.fixture
def tiny_catalog(ottoman) -> Catalog:
    mug = Product(
        id="B0MUG00001",
        title="Kessa Coffee Mug, Insulated",
        price=Decimal("12.50"),
        options={"color": ["white", "black"]},
        attributes=("insulated",),
        product_type="coffee mug",
    )
    return Catalog([ottoman, mug])


@pytest.fixture
def ottoman_goal() -> ShoppingGoal:
    return ShoppingGoal(
        goal_id="shop-otto",
        instruction="i want a pink folding storage ottoman, and price lower than 200.00 dollars",
        required_attributes=("folding",),
        required_options={"color": "pink"},
        price_cap=Decimal("200"),
        target_type="storage ottoman",
    )


@pytest.fixture
def small_world_episode() -> HouseEpisode:
    """Three receptacles: a cloth on the countertop must end up clean in the cabinet."""
    world = WorldSpec(
        name="tiny",
        receptacles=[
            ReceptacleSpec(id="cabinet 1", openable=True),
            ReceptacleSpec(id="countertop 1"),
            ReceptacleSpec(id="sinkbasin 1"),
        ],
        objects=[ObjectSpec(id="cloth 1", object_class="cloth", location="countertop 1")],
    )
    task = HouseTask(
        task_id="pick_clean_then_place_in_recep-Cloth-None-Cabinet-1",
        family="pick_clean_then_place_in_recep",
        object_class="cloth",
        target="cabinet",
    )
    return HouseEpisode(world=world, task=task)


@pytest.fixture
def shop_files(tmp_path, catalog, shop_goals):
    catalog_path = save_catalog(catalog, str(tmp_path / "data" / "catalog.jsonl"))
    goals_path = save_goals(shop_goals, str(tmp_path / "data" / "shop_goals.jsonl"))
    return catalog_path, goals_path


@pytest.fixture
def house_file(tmp_path, house_episodes):
    return save_house_tasks(house_episodes, str(tmp_path / "data" / "house_tasks.jsonl"))
