"""Continuous double auction for wood and stone.

All orders are for a single unit at an integer price in [0, 10]. An incoming
order matches immediately against the best-priced compatible resting order
from another agent (ties broken by arrival); the trade executes at the
resting (earlier) order's price. Unmatched orders rest until matched or
expired after 50 ticks. Bids escrow their coin and asks escrow their unit at
submission, so every resting order is always fully backed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .world import ResourceKind, World

MAX_PRICE = 10
N_PRICE_LEVELS = MAX_PRICE + 1
MAX_ORDER_AGE = 50
MAX_OPEN_ORDERS = 5      # per agent per resource, both sides combined
N_TRADE_ACTIONS = 2 * 2 * N_PRICE_LEVELS   # side x resource x price

BID, ASK = "bid", "ask"


@dataclass
class Order:
    owner: int
    side: str
    resource: ResourceKind
    price: int
    sequence: int = -1
    age: int = 0

    def __post_init__(self):
        if self.side not in (BID, ASK):
            raise ValueError(f"bad side {self.side!r}")
        if not (0 <= self.price <= MAX_PRICE) or int(self.price) != self.price:
            raise ValueError(f"price must be an integer in [0, {MAX_PRICE}]")
        self.price = int(self.price)
        self.resource = ResourceKind(self.resource)


@dataclass(frozen=True)
class Trade:
    resource: ResourceKind
    price: int                 # execution price (the earlier order's price)
    tick: int
    buyer: int
    seller: int
    bid_price: int
    ask_price: int
    bid_sequence: int
    ask_sequence: int


def trade_action_decode(index: int) -> Order:
    """Map an action index in [0, 44) to an order template.

    Ordering is side-major (bid, then ask), then resource (wood, then
    stone), then price ascending: index = side*22 + resource*11 + price.
    """
    if not (0 <= index < N_TRADE_ACTIONS):
        raise ValueError(f"trade action index {index} out of range")
    side = BID if index < 2 * N_PRICE_LEVELS else ASK
    rem = index % (2 * N_PRICE_LEVELS)
    resource = ResourceKind(rem // N_PRICE_LEVELS)
    price = rem % N_PRICE_LEVELS
    return Order(owner=-1, side=side, resource=resource, price=price)


def trade_action_encode(side: str, resource: ResourceKind, price: int) -> int:
    side_idx = 0 if side == BID else 1
    return side_idx * 2 * N_PRICE_LEVELS + int(resource) * N_PRICE_LEVELS + price


class OrderBook:
    """Open orders, trade history, and escrow-settled matching."""

    def __init__(self, n_agents: int):
        self.n_agents = n_agents
        self.open_orders: list[Order] = []
        self.trades: list[Trade] = []
        self.next_sequence = 0
        self.tick = 0
        # Count layers kept incrementally for observations.
        self.bid_counts = np.zeros((n_agents, 2, N_PRICE_LEVELS), dtype=np.int32)
        self.ask_counts = np.zeros((n_agents, 2, N_PRICE_LEVELS), dtype=np.int32)
        self.trade_counts = np.zeros((2, N_PRICE_LEVELS), dtype=np.int32)
        self.trade_price_sum = np.zeros(2)

    # -- bookkeeping helpers --------------------------------------------------

    def open_count(self, agent_id: int, resource: ResourceKind) -> int:
        r = int(resource)
        return int(self.bid_counts[agent_id, r].sum() + self.ask_counts[agent_id, r].sum())

    def _counts_for(self, order: Order) -> np.ndarray:
        return self.bid_counts if order.side == BID else self.ask_counts

    def _add_open(self, order: Order):
        self.open_orders.append(order)
        self._counts_for(order)[order.owner, int(order.resource), order.price] += 1

    def _remove_open(self, order: Order):
        self.open_orders.remove(order)
        self._counts_for(order)[order.owner, int(order.resource), order.price] -= 1

    def _refund(self, order: Order, world: World):
        agent = world.agents[order.owner]
        if order.side == BID:
            agent.escrow_coin -= order.price
            agent.coin += order.price
        elif order.resource == ResourceKind.WOOD:
            agent.escrow_wood -= 1
            agent.wood += 1
        else:
            agent.escrow_stone -= 1
            agent.stone += 1

    def cancel(self, order: Order, world: World):
        """Remove a resting order and refund its escrow (expiry/forced cancel)."""
        self._remove_open(order)
        self._refund(order, world)

    def agent_open_bids(self, agent_id: int):
        return [o for o in self.open_orders if o.owner == agent_id and o.side == BID]

    # -- core operations -------------------------------------------------------

    def submit(self, world: World, order: Order):
        """Escrow, then match or rest the order.

        Returns (accepted, trade, reason): rejected submissions leave all
        state untouched and charge no labor.
        """
        agent = world.agents[order.owner]
        if self.open_count(order.owner, order.resource) >= MAX_OPEN_ORDERS:
            return False, None, "open-order cap reached"
        if order.side == BID:
            if agent.coin < order.price:
                return False, None, "insufficient coin"
            agent.coin -= order.price
            agent.escrow_coin += order.price
        else:
            if agent.resource_count(order.resource) < 1:
                return False, None, "insufficient resources"
            if order.resource == ResourceKind.WOOD:
                agent.wood -= 1
                agent.escrow_wood += 1
            else:
                agent.stone -= 1
                agent.escrow_stone += 1
        order.sequence = self.next_sequence
        self.next_sequence += 1
        order.age = 0
        agent.labor += world.labor_costs.trade

        match = self._best_counterparty(order)
        if match is None:
            self._add_open(order)
            return True, None, None
        trade = self._execute(order, match, world)
        return True, trade, None

    def _best_counterparty(self, incoming: Order):
        """Best-priced compatible resting order.

        Bids prefer the lowest ask, asks the highest bid; ties go to the
        oldest (lowest sequence). An agent's own resting orders are eligible
        (a self-cross nets out to a cancellation), which keeps the book
        uncrossed at rest.
        """
        want_side = ASK if incoming.side == BID else BID
        best = None
        for o in self.open_orders:
            if o.side != want_side or o.resource != incoming.resource:
                continue
            if incoming.side == BID:
                if o.price > incoming.price:
                    continue
                better = best is None or o.price < best.price or (
                    o.price == best.price and o.sequence < best.sequence
                )
            else:
                if o.price < incoming.price:
                    continue
                better = best is None or o.price > best.price or (
                    o.price == best.price and o.sequence < best.sequence
                )
            if better:
                best = o
        return best

    def _execute(self, incoming: Order, resting: Order, world: World) -> Trade:
        bid = incoming if incoming.side == BID else resting
        ask = resting if incoming.side == BID else incoming
        price = resting.price        # the resting order was placed first
        buyer = world.agents[bid.owner]
        seller = world.agents[ask.owner]

        # Buyer: release escrowed coin (refunding any excess over the
        # execution price) and take the unit; the incoming order was never
        # escrowed as "open" but its funds were reserved above.
        buyer.escrow_coin -= bid.price
        buyer.coin += bid.price - price
        buyer.add_resource(ask.resource, 1)
        # Seller: hand over the escrowed unit, receive the coin.
        if ask.resource == ResourceKind.WOOD:
            seller.escrow_wood -= 1
        else:
            seller.escrow_stone -= 1
        seller.coin += price

        self._remove_open(resting)
        trade = Trade(
            resource=ask.resource,
            price=price,
            tick=self.tick,
            buyer=bid.owner,
            seller=ask.owner,
            bid_price=bid.price,
            ask_price=ask.price,
            bid_sequence=bid.sequence,
            ask_sequence=ask.sequence,
        )
        self.trades.append(trade)
        self.trade_counts[int(trade.resource), price] += 1
        self.trade_price_sum[int(trade.resource)] += price
        return trade

    def step_expire(self, world: World):
        """Age all resting orders and refund those past the duration limit."""
        self.tick += 1
        expired = []
        for o in list(self.open_orders):
            o.age += 1
            if o.age > MAX_ORDER_AGE:
                expired.append(o)
                self.cancel(o, world)
        return expired


@dataclass(frozen=True)
class MarketView:
    """Observation summary: order counts, trade counts, and average prices."""

    bids_own: np.ndarray       # (2, 11); zeros for the planner view
    asks_own: np.ndarray
    bids_other: np.ndarray     # others' counts, or all agents' for the planner
    asks_other: np.ndarray
    avg_trade_price: np.ndarray  # (2,); 0 where no trade has happened
    trades_at_level: np.ndarray  # (2, 11)


def market_observation(book: OrderBook, agent_id: int | None = None) -> MarketView:
    """Per-agent (own vs others) or planner (cumulative) market summary."""
    total_bids = book.bid_counts.sum(axis=0)
    total_asks = book.ask_counts.sum(axis=0)
    if agent_id is None:
        own_b = np.zeros_like(total_bids)
        own_a = np.zeros_like(total_asks)
        other_b, other_a = total_bids, total_asks
    else:
        own_b = book.bid_counts[agent_id]
        own_a = book.ask_counts[agent_id]
        other_b = total_bids - own_b
        other_a = total_asks - own_a
    n_trades = book.trade_counts.sum(axis=1)
    with np.errstate(invalid="ignore"):
        avg = np.where(n_trades > 0, book.trade_price_sum / np.maximum(n_trades, 1), 0.0)
    return MarketView(
        bids_own=own_b.copy(),
        asks_own=own_a.copy(),
        bids_other=other_b.copy(),
        asks_other=other_a.copy(),
        avg_trade_price=avg,
        trades_at_level=book.trade_counts.copy(),
    )
