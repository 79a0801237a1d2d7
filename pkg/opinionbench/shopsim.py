"""Desk-scale web shop: catalog, lexical search, a four-page state machine and the purchase reward."""
import itertools
import logging
import random
import re
import string
from collections import Counter
from decimal import ROUND_UP, Decimal
from typing import Dict, Iterable, Iterator, List, Literal, Optional, Sequence, Tuple

from pydantic import BaseModel, Field, ValidationError

from .errors import ConfigurationError, DataFileError, EpisodeOver, UnknownTool, UnsolvableTask
from .models import CommandRequest, Product, ShoppingGoal, ToolDemo, ToolSpec
from .prompts import render_command
from .utils import iter_jsonl, normalize_action, tokenize, write_jsonl

logger = logging.getLogger(__name__)

PAGE_SIZE = 10
BACK = "Back to Search"
PREV = "< Prev"
NEXT = "Next >"
BUY = "Buy Now"
TABS = ("Description", "Features", "Reviews")

Phase = Literal["search", "results", "item", "terminal"]

_BUTTON_RE = re.compile(r"\[button\] (.+?) \[button_\]")
_INSTRUCTION_RE = re.compile(r"Instruction:\n(.+)")
# the verb is followed by whitespace or a bracketed argument
ACTION_RE = re.compile(r"^(?P<verb>search|click)(?:\s+|(?=\[))(?P<arg>.*)$", re.IGNORECASE | re.DOTALL)


def button(label: str) -> str:
    return f"[button] {label} [button_]"


# --- catalog ------------------------------------------------------------------

class Catalog:
    def __init__(self, products: Iterable[Product]) -> None:
        self.products: Tuple[Product, ...] = tuple(products)
        if not self.products:
            raise ConfigurationError("catalog is empty")
        self._by_id: Dict[str, Product] = {}
        for p in self.products:
            key = p.id.lower()
            if key in self._by_id:
                raise ConfigurationError(f"duplicate product id {p.id}")
            self._by_id[key] = p
        self._title = {p.id: Counter(tokenize(p.title)) for p in self.products}
        self._meta = {
            p.id: Counter(tokenize(" ".join(p.attributes)) + tokenize(p.product_type)) for p in self.products
        }

    def __len__(self) -> int:
        return len(self.products)

    def __iter__(self) -> Iterator[Product]:
        return iter(self.products)

    def get(self, item_id: str) -> Optional[Product]:
        return self._by_id.get((item_id or "").strip().lower())

    def lexical_score(self, product: Product, query_tokens: Sequence[str]) -> int:
        title, meta = self._title[product.id], self._meta[product.id]
        return sum(2 * title[t] + meta[t] for t in query_tokens)

    def search(self, query: str) -> List[Product]:
        """Products with a positive score, best first, ties by ascending id."""
        tokens = tokenize(query)
        scored = []
        for p in self.products:
            s = self.lexical_score(p, tokens)
            if s > 0:
                scored.append((-s, p.id, p))
        scored.sort(key=lambda x: (x[0], x[1]))
        return [p for _, _, p in scored]


def load_catalog(path: str) -> Catalog:
    products = []
    for n, obj in iter_jsonl(path):
        try:
            products.append(Product.model_validate(obj))
        except ValidationError as exc:
            raise DataFileError(n, str(exc)) from exc
    logger.info("loaded %d products from %s", len(products), path)
    return Catalog(products)


def save_catalog(catalog: Catalog, path: str) -> str:
    return write_jsonl(path, [p.model_dump(mode="json") for p in catalog])


def load_goals(path: str) -> List[ShoppingGoal]:
    goals = []
    for n, obj in iter_jsonl(path):
        try:
            goals.append(ShoppingGoal.model_validate(obj))
        except ValidationError as exc:
            raise DataFileError(n, str(exc)) from exc
    return goals


def save_goals(goals: Sequence[ShoppingGoal], path: str) -> str:
    return write_jsonl(path, [g.model_dump(mode="json") for g in goals])


# --- reward -------------------------------------------------------------------

def compute_reward(
    goal: ShoppingGoal, product: Optional[Product], options: Optional[Dict[str, str]]
) -> Tuple[float, bool]:
    """Purchase reward in [0, 100] and whether every requirement was met."""
    if product is None:
        return 0.0, False
    if product.product_type.lower() != goal.target_type.lower():
        return 0.0, False
    options = options or {}
    owned = set(product.attributes)
    hits = sum(1 for a in goal.required_attributes if a in owned)
    hits += sum(
        1
        for name, value in goal.required_options.items()
        if normalize_action(options.get(name, "")) == normalize_action(value)
    )
    hits += int(product.price <= goal.price_cap)
    total = len(goal.required_attributes) + len(goal.required_options) + 1
    return 100.0 * hits / total, hits == total


# --- pages --------------------------------------------------------------------

class ShopState(BaseModel):
    phase: Phase = "search"
    query: str = ""
    results: List[str] = Field(default_factory=list)
    page: int = 0
    item_id: Optional[str] = None
    tab: Optional[str] = None
    selected: Dict[str, str] = Field(default_factory=dict)
    purchased: Optional[str] = None
    purchased_options: Dict[str, str] = Field(default_factory=dict)
    steps_used: int = 0


class ShopObservation(BaseModel):
    text: str
    buttons: List[str] = Field(default_factory=list)
    phase: Phase
    instruction: str
    page_items: List[str] = Field(default_factory=list)
    item_id: Optional[str] = None
    selected: Dict[str, str] = Field(default_factory=dict)
    steps_used: int = 0

    @property
    def available_actions(self) -> List[str]:
        acts = [f"click {b}" for b in self.buttons]
        if self.phase == "search":
            acts.append(f"search {self.instruction}")
        return acts


def _demo_page(buttons: Sequence[str], extra: Sequence[str] = ()) -> str:
    return "\n".join(["Instruction:", "i want a pink hair towel wrap, and price lower than 20.00 dollars",
                      *[button(b) for b in buttons], *extra])


SHOP_TOOLS = [
    ToolSpec(
        name="search",
        description="Search the shop with a text query. Works on the search page and on a results page.",
        demos=[
            ToolDemo(
                observation=_demo_page([], ["[search]"]).replace("\n", " "),
                command=render_command(CommandRequest(name="search", tool_input="pink hair towel wrap")),
            )
        ],
    ),
    ToolSpec(
        name="click",
        description=(
            "Click a button on the current page: an item id, an option value, "
            "Description, Features, Reviews, < Prev, Next >, Back to Search or Buy Now."
        ),
        demos=[
            ToolDemo(
                observation=_demo_page([BACK, "B08G14B779"], ["Page 1 (Total results: 1)",
                                                             "Turbie Twist Microfiber Hair Towel Wrap",
                                                             "$12.99"]).replace("\n", " "),
                command=render_command(CommandRequest(name="click", tool_input="B08G14B779")),
            ),
            ToolDemo(
                observation=_demo_page([BACK, PREV, "pink", "blue"]).replace("\n", " "),
                command=render_command(CommandRequest(name="click", tool_input="pink")),
            ),
            ToolDemo(
                observation=_demo_page([BACK, PREV, "pink (selected)", *TABS, BUY]).replace("\n", " "),
                command=render_command(CommandRequest(name="click", tool_input=BUY)),
            ),
        ],
    ),
]


class ShopEnv:
    kind = "shop"
    commit_label = "purchased"
    agent_name = "Shopper-GPT"
    fallback_action = f"click {BACK}"
    tools = SHOP_TOOLS

    def __init__(self, catalog: Catalog, goal: ShoppingGoal, max_steps: int = 20) -> None:
        if max_steps < 1:
            raise ConfigurationError("max_steps must be >= 1")
        self.catalog = catalog
        self.goal = goal
        self.max_steps = max_steps
        self.reset()

    @property
    def task_id(self) -> str:
        return self.goal.goal_id

    @property
    def instruction(self) -> str:
        return self.goal.instruction

    @property
    def done(self) -> bool:
        return self.state.phase == "terminal" or self.state.steps_used >= self.max_steps

    @property
    def observation(self) -> str:
        return self._last.text

    def reset(self) -> ShopObservation:
        self.state = ShopState()
        self._last = self._render()
        return self._last

    def observe(self) -> ShopObservation:
        return self._last

    def available_actions(self) -> List[str]:
        return self._last.available_actions

    # rendering

    def _render(self, notice: Optional[str] = None) -> ShopObservation:
        st = self.state
        lines = ["Instruction:", self.goal.instruction]
        buttons: List[str] = []
        items: List[str] = []

        def add(label: str, shown: Optional[str] = None) -> None:
            buttons.append(label)
            lines.append(button(shown or label))

        if st.phase == "search":
            lines.append("[search]")
        elif st.phase == "results":
            add(BACK)
            lines.append(f"Page {st.page + 1} (Total results: {len(st.results)})")
            if st.page > 0:
                add(PREV)
            start = st.page * PAGE_SIZE
            if start + PAGE_SIZE < len(st.results):
                add(NEXT)
            for item_id in st.results[start:start + PAGE_SIZE]:
                p = self.catalog.get(item_id)
                items.append(p.id)
                add(p.id)
                lines.append(p.title)
                lines.append(f"${p.price}")
        elif st.phase == "item":
            p = self.catalog.get(st.item_id)
            add(BACK)
            add(PREV)
            for name, values in p.options.items():
                lines.append(f"{name}:")
                for v in values:
                    add(v, f"{v} (selected)" if st.selected.get(name) == v else v)
            lines.append(p.title)
            lines.append(f"Price: ${p.price}")
            if st.tab:
                lines.append(f"{st.tab}: {getattr(p, st.tab.lower()) or 'N.A.'}")
            for tab in TABS:
                add(tab)
            add(BUY)
        else:
            p = self.catalog.get(st.purchased)
            chosen = ", ".join(f"{k}: {v}" for k, v in st.purchased_options.items()) or "none"
            lines = ["Thank you for shopping with us!", f"Your purchase: {p.id} {p.title}", f"Options: {chosen}"]

        text = "\n".join(lines)
        if notice:
            text = f"{notice}\n{text}"
        return ShopObservation(
            text=text,
            buttons=buttons,
            phase=st.phase,
            instruction=self.goal.instruction,
            page_items=items,
            item_id=st.item_id,
            selected=dict(st.selected),
            steps_used=st.steps_used,
        )

    def _show(self, notice: Optional[str] = None) -> ShopObservation:
        self._last = self._render(notice)
        return self._last

    def _begin(self) -> None:
        if self.done:
            raise EpisodeOver()
        self.state.steps_used += 1

    def _invalid(self, reason: str) -> ShopObservation:
        return self._show(f"Invalid action: {reason}")

    # actions

    def search(self, query: str) -> ShopObservation:
        self._begin()
        st = self.state
        if st.phase not in ("search", "results"):
            return self._invalid("search is only available on the search and results pages")
        query = (query or "").strip()
        if not query:
            return self._invalid("empty search query")
        st.query = query
        st.results = [p.id for p in self.catalog.search(query)]
        st.phase, st.page, st.item_id, st.tab, st.selected = "results", 0, None, None, {}
        return self._show()

    def click(self, target: str) -> ShopObservation:
        self._begin()
        st = self.state
        wanted = normalize_action(target)
        label = next((b for b in self._last.buttons if normalize_action(b) == wanted), None)
        if label is None:
            return self._invalid(f"no button named {target!r}")

        if label == BACK:
            st.phase, st.query, st.results, st.page = "search", "", [], 0
            st.item_id, st.tab, st.selected = None, None, {}
        elif st.phase == "results":
            if label == PREV:
                st.page -= 1
            elif label == NEXT:
                st.page += 1
            else:
                st.phase, st.item_id, st.tab, st.selected = "item", self.catalog.get(label).id, None, {}
        elif label == PREV:
            if st.tab:
                st.tab = None
            else:
                st.phase, st.item_id, st.selected = "results", None, {}
        elif label in TABS:
            st.tab = label
        elif label == BUY:
            st.phase, st.purchased, st.purchased_options = "terminal", st.item_id, dict(st.selected)
            logger.debug("goal %s: bought %s with %s", self.task_id, st.purchased, st.purchased_options)
        else:
            p = self.catalog.get(st.item_id)
            name = next(n for n, values in p.options.items() if label in values)
            st.selected[name] = label
        return self._show()

    def execute(self, action: str) -> ShopObservation:
        """Run an action string such as 'search red mug', 'click[Buy Now]' or 'click B0ABCDEFGH'."""
        m = ACTION_RE.match((action or "").strip())
        if m:
            fn = self.search if m.group("verb").lower() == "search" else self.click
            arg = m.group("arg").strip()
            if arg.startswith("[") and arg.endswith("]"):
                arg = arg[1:-1].strip()
            return fn(arg)
        self._begin()
        return self._invalid(f"unrecognised action {action!r}")

    def step(self, command: CommandRequest) -> str:
        if command.name == "search":
            return self.search(command.tool_input).text
        if command.name == "click":
            return self.click(command.tool_input).text
        raise UnknownTool(command.name)

    def action_of(self, command: CommandRequest) -> str:
        return f"{command.name} {command.tool_input}".strip()

    def command_of(self, action: str) -> CommandRequest:
        verb, _, rest = (action or "").strip().partition(" ")
        if verb.lower() in ("search", "click"):
            return CommandRequest(name=verb.lower(), tool_input=rest.strip())
        return CommandRequest(name="click", tool_input=action.strip())

    @staticmethod
    def listed_actions(text: str) -> List[str]:
        """Actions readable off a rendered page."""
        acts = []
        for label in _BUTTON_RE.findall(text or ""):
            if label.endswith(" (selected)"):
                label = label[: -len(" (selected)")]
            acts.append(f"click {label}")
        if "[search]" in (text or ""):
            m = _INSTRUCTION_RE.search(text)
            if m:
                acts.append(f"search {m.group(1).strip()}")
        return acts

    def outcome(self) -> Tuple[bool, float, bool]:
        if self.state.purchased is None:
            return False, 0.0, False
        reward, success = compute_reward(
            self.goal, self.catalog.get(self.state.purchased), self.state.purchased_options
        )
        return success, reward, True

    def solve(self) -> List[str]:
        """Shortest scripted route from the search page to a purchase meeting every requirement."""
        for p in sorted(self.catalog, key=lambda x: x.id):
            names = list(p.options)
            for combo in itertools.product(*(p.options[n] for n in names)):
                options = dict(zip(names, combo))
                if compute_reward(self.goal, p, options)[1]:
                    return self._route(p, options)
        raise UnsolvableTask(f"no product satisfies goal {self.task_id}")

    def _route(self, product: Product, options: Dict[str, str]) -> List[str]:
        ranked = [p.id for p in self.catalog.search(product.title)]
        page = ranked.index(product.id) // PAGE_SIZE
        clicks = [options[n] for n in product.options if n in self.goal.required_options]
        return (
            [f"search {product.title}"]
            + [f"click {NEXT}"] * page
            + [f"click {product.id}"]
            + [f"click {v}" for v in clicks]
            + [f"click {BUY}"]
        )


# --- generation ---------------------------------------------------------------

PRODUCT_TEMPLATES = [
    {
        "type": "storage ottoman",
        "nouns": ["storage ottoman", "storage ottoman bench", "folding storage ottoman"],
        "attributes": ["faux leather", "easy install", "memory foam", "padded seat", "large capacity", "living room"],
        "options": {"color": ["black", "brown", "pink", "grey"], "size": ["40x40x40cm", "60x40x40cm", "80x40x40cm"]},
        "price": (40, 260),
    },
    {
        "type": "hair towel",
        "nouns": ["hair towel", "hair towel wrap", "microfiber hair towel"],
        "attributes": ["quick drying", "super absorbent", "anti frizz", "button design", "curly hair", "soft"],
        "options": {"color": ["pink", "light blue", "purple", "white"], "pack": ["1 pack", "2 pack", "3 pack"]},
        "price": (6, 30),
    },
    {
        "type": "running shoes",
        "nouns": ["running shoes", "trail running shoes", "road running shoes"],
        "attributes": ["breathable", "non slip", "lightweight", "rubber sole", "wide toe box", "waterproof"],
        "options": {"color": ["black", "white", "navy", "red"], "size": ["7", "8", "9", "10", "11"]},
        "price": (30, 180),
    },
    {
        "type": "coffee mug",
        "nouns": ["coffee mug", "travel coffee mug", "ceramic coffee mug"],
        "attributes": ["dishwasher safe", "microwave safe", "insulated", "lead free", "large handle", "gift box"],
        "options": {"color": ["white", "black", "green", "yellow"], "capacity": ["12 oz", "16 oz", "20 oz"]},
        "price": (8, 45),
    },
    {
        "type": "desk lamp",
        "nouns": ["desk lamp", "led desk lamp", "reading desk lamp"],
        "attributes": ["dimmable", "usb charging", "eye caring", "touch control", "adjustable arm", "night light"],
        "options": {"color": ["black", "white", "silver"]},
        "price": (15, 90),
    },
    {
        "type": "yoga mat",
        "nouns": ["yoga mat", "exercise yoga mat", "thick yoga mat"],
        "attributes": ["non slip", "extra thick", "eco friendly", "carrying strap", "sweat resistant", "lightweight"],
        "options": {"color": ["purple", "blue", "black", "teal"], "thickness": ["6mm", "8mm", "10mm"]},
        "price": (12, 80),
    },
    {
        "type": "phone case",
        "nouns": ["phone case", "protective phone case", "slim phone case"],
        "attributes": ["shockproof", "slim fit", "wireless charging", "clear back", "kickstand", "drop protection"],
        "options": {"color": ["clear", "black", "blue", "rose gold"], "model": ["iphone 13", "iphone 14", "galaxy s22"]},
        "price": (7, 40),
    },
    {
        "type": "backpack",
        "nouns": ["backpack", "laptop backpack", "travel backpack"],
        "attributes": ["water resistant", "laptop compartment", "usb port", "anti theft", "padded straps", "lightweight"],
        "options": {"color": ["black", "grey", "navy", "olive"], "size": ["small", "medium", "large"]},
        "price": (20, 120),
    },
]

BRANDS = ["Qtqhome", "Turbie", "Vivagear", "Norhoo", "Lumira", "Kessa", "Obrio", "Fendix", "Marlow", "Zenvo"]

REVIEWS = [
    "Works as described.",
    "Good value for the price.",
    "Arrived quickly, well packed.",
    "Quality is better than expected.",
    "Would buy again.",
]

_ID_CHARS = string.ascii_uppercase + string.digits
_CENT = Decimal("0.01")


def gen_catalog(seed: int, n: int) -> Catalog:
    if n < 1:
        raise ConfigurationError("catalog size must be >= 1")
    rng = random.Random(seed)
    products: List[Product] = []
    seen = set()
    for _ in range(n):
        tpl = rng.choice(PRODUCT_TEMPLATES)
        pid = "B0" + "".join(rng.choice(_ID_CHARS) for _ in range(8))
        while pid in seen:
            pid = "B0" + "".join(rng.choice(_ID_CHARS) for _ in range(8))
        seen.add(pid)
        brand = rng.choice(BRANDS)
        noun = rng.choice(tpl["nouns"])
        attrs = rng.sample(tpl["attributes"], k=rng.randint(2, 4))
        # the last attribute stays out of the title, visible only under Description/Features
        in_title = attrs[:-1]
        title = f"{brand} {noun.title()}, " + ", ".join(a.title() for a in in_title)
        options = {}
        for name, values in tpl["options"].items():
            picked = set(rng.sample(values, k=rng.randint(2, len(values))))
            options[name] = [v for v in values if v in picked]
        lo, hi = tpl["price"]
        price = (Decimal(rng.randint(lo * 100, hi * 100)) / 100).quantize(_CENT)
        products.append(
            Product(
                id=pid,
                title=title,
                description=f"{noun.capitalize()} by {brand}: {', '.join(attrs)}.",
                features="; ".join(attrs),
                reviews=rng.choice(REVIEWS),
                price=price,
                options=options,
                attributes=tuple(attrs),
                product_type=tpl["type"],
            )
        )
    return Catalog(products)


def _phrase(words: Sequence[str]) -> str:
    return " and ".join(words)


def gen_goals(catalog: Catalog, seed: int, n: int) -> List[ShoppingGoal]:
    """Goals sampled off real products, so each has at least one perfect match."""
    rng = random.Random(seed)
    pool = sorted(catalog, key=lambda p: p.id)
    goals = []
    for i in range(n):
        p = rng.choice(pool)
        attrs = rng.sample(list(p.attributes), k=min(len(p.attributes), rng.randint(1, 2)))
        opts = {name: rng.choice(values) for name, values in p.options.items()}
        cap = (p.price * Decimal("1.25") / 10).to_integral_value(rounding=ROUND_UP) * 10
        option_text = ", ".join(f"{name} {value}" for name, value in opts.items())
        instruction = (
            f"i am looking for a {p.product_type} that is {_phrase(sorted(attrs))}, "
            f"with {option_text}, and price lower than {cap:.2f} dollars"
        )
        goals.append(
            ShoppingGoal(
                goal_id=f"shop-{i:04d}",
                instruction=instruction,
                required_attributes=tuple(attrs),
                required_options=opts,
                price_cap=cap,
                target_type=p.product_type,
            )
        )
    return goals
