import numpy as np
import pytest

from gatherbuild.market import (
    ASK,
    BID,
    MAX_OPEN_ORDERS,
    N_TRADE_ACTIONS,
    Order,
    OrderBook,
    market_observation,
    trade_action_decode,
    trade_action_encode,
)
from gatherbuild.world import AgentState, ResourceKind, World, load_map


def make_world(n_agents=4, coin=50.0, wood=5, stone=5):
    rows = ["." * 8] * 8
    wm = load_map("8 8\n" + "\n".join(rows))
    agents = [
        AgentState(id=i, position=(0, 2 * i), building_skill=1.0, collection_skill=1.0,
                   coin=coin, wood=wood, stone=stone)
        for i in range(n_agents)
    ]
    return World(wm, agents)


def submit(book, world, owner, side, resource, price):
    return book.submit(world, Order(owner=owner, side=side, resource=resource, price=price))


class ReferenceMatcher:
    """Brute-force re-statement of the matching rules, kept deliberately dumb.

    Tracks its own balances; trades are (resource, price, buyer, seller,
    bid_seq, ask_seq) tuples for set comparison against the real book.
    """

    def __init__(self, coins, woods, stones):
        self.coin = list(coins)
        self.res = {ResourceKind.WOOD: list(woods), ResourceKind.STONE: list(stones)}
        self.resting = []       # (side, resource, price, owner, seq)
        self.trades = []
        self.seq = 0

    def open_count(self, owner, resource):
        return sum(1 for s, r, p, o, q in self.resting if o == owner and r == resource)

    def submit(self, owner, side, resource, price):
        if self.open_count(owner, resource) >= MAX_OPEN_ORDERS:
            return
        if side == BID:
            if self.coin[owner] < price:
                return
            self.coin[owner] -= price
        else:
            if self.res[resource][owner] < 1:
                return
            self.res[resource][owner] -= 1
        seq = self.seq
        self.seq += 1

        candidates = [
            (s, r, p, o, q)
            for (s, r, p, o, q) in self.resting
            if r == resource
            and ((side == BID and s == ASK and p <= price)
                 or (side == ASK and s == BID and p >= price))
        ]
        if not candidates:
            self.resting.append((side, resource, price, owner, seq))
            return
        if side == BID:
            best = min(candidates, key=lambda t: (t[2], t[4]))
        else:
            best = max(candidates, key=lambda t: (t[2], -t[4]))
        self.resting.remove(best)
        _, _, rest_price, rest_owner, rest_seq = best
        exec_price = rest_price   # resting order arrived first
        if side == BID:
            buyer, seller = owner, rest_owner
            bid_price, ask_price = price, rest_price
            bid_seq, ask_seq = seq, rest_seq
            self.coin[buyer] += price - exec_price   # refund escrow overage
        else:
            buyer, seller = rest_owner, owner
            bid_price, ask_price = rest_price, price
            bid_seq, ask_seq = rest_seq, seq
        self.res[resource][buyer] += 1
        self.coin[seller] += exec_price
        self.trades.append((resource, exec_price, buyer, seller, bid_seq, ask_seq))


class TestWorkedExamples:
    def test_bid_matches_cheapest_ask(self):
        w = make_world()
        book = OrderBook(4)
        submit(book, w, 1, ASK, ResourceKind.STONE, 3)
        submit(book, w, 2, ASK, ResourceKind.STONE, 7)
        ok, trade, _ = submit(book, w, 0, BID, ResourceKind.STONE, 8)
        assert ok and trade is not None
        assert trade.price == 3 and trade.seller == 1 and trade.buyer == 0
        # Buyer paid 3 (escrowed 8, refunded 5) and got the stone.
        assert w.agents[0].coin == pytest.approx(47.0)
        assert w.agents[0].stone == 6
        assert w.agents[1].coin == pytest.approx(53.0)
        # The other ask still rests.
        assert len(book.open_orders) == 1 and book.open_orders[0].owner == 2

    def test_low_bid_rests(self):
        w = make_world()
        book = OrderBook(4)
        submit(book, w, 1, ASK, ResourceKind.WOOD, 5)
        ok, trade, _ = submit(book, w, 0, BID, ResourceKind.WOOD, 2)
        assert ok and trade is None
        assert len(book.open_orders) == 2

    def test_tie_breaks_by_age(self):
        w = make_world()
        book = OrderBook(4)
        submit(book, w, 1, ASK, ResourceKind.WOOD, 3)   # seq 0
        submit(book, w, 2, ASK, ResourceKind.WOOD, 3)   # seq 1
        ok, trade, _ = submit(book, w, 0, BID, ResourceKind.WOOD, 3)
        assert trade.ask_sequence == 0 and trade.seller == 1

    def test_self_cross_nets_out(self):
        # Crossing one's own resting order executes like any other trade,
        # which keeps the resting book uncrossed; holdings net out.
        w = make_world()
        book = OrderBook(4)
        submit(book, w, 0, ASK, ResourceKind.WOOD, 2)
        ok, trade, _ = submit(book, w, 0, BID, ResourceKind.WOOD, 5)
        assert ok and trade is not None
        assert trade.buyer == trade.seller == 0
        assert len(book.open_orders) == 0
        assert w.agents[0].coin == pytest.approx(50.0)
        assert w.agents[0].wood == 5
        assert w.agents[0].escrow_coin == 0.0 and w.agents[0].escrow_wood == 0

    def test_trade_labor_charged_once_per_submission(self):
        w = make_world()
        book = OrderBook(4)
        submit(book, w, 1, ASK, ResourceKind.WOOD, 3)
        submit(book, w, 0, BID, ResourceKind.WOOD, 3)
        assert w.agents[0].labor == pytest.approx(0.05)
        assert w.agents[1].labor == pytest.approx(0.05)


class TestRejections:
    def test_open_order_cap(self):
        w = make_world(coin=100.0)
        book = OrderBook(4)
        for _ in range(MAX_OPEN_ORDERS):
            ok, _, _ = submit(book, w, 0, BID, ResourceKind.WOOD, 1)
            assert ok
        ok, _, reason = submit(book, w, 0, BID, ResourceKind.WOOD, 1)
        assert not ok and "cap" in reason
        # Caps are per resource: stone orders still fine.
        assert submit(book, w, 0, BID, ResourceKind.STONE, 1)[0]

    def test_insufficient_coin(self):
        w = make_world(coin=2.0)
        book = OrderBook(4)
        ok, _, reason = submit(book, w, 0, BID, ResourceKind.WOOD, 3)
        assert not ok and "coin" in reason
        assert w.agents[0].coin == 2.0 and w.agents[0].labor == 0.0

    def test_insufficient_resource(self):
        w = make_world(wood=0)
        book = OrderBook(4)
        ok, _, reason = submit(book, w, 0, ASK, ResourceKind.WOOD, 3)
        assert not ok and "resource" in reason


class TestExpiry:
    def test_order_expires_after_limit(self):
        w = make_world()
        book = OrderBook(4)
        submit(book, w, 0, BID, ResourceKind.WOOD, 4)
        for _ in range(50):
            assert book.step_expire(w) == []
        assert book.open_orders[0].age == 50
        expired = book.step_expire(w)
        assert len(expired) == 1
        assert w.agents[0].coin == pytest.approx(50.0)
        assert w.agents[0].escrow_coin == 0.0

    def test_empty_book_noop(self):
        w = make_world()
        book = OrderBook(4)
        assert book.step_expire(w) == []

    def test_bulk_refund(self):
        w = make_world(coin=10.0)
        book = OrderBook(4)
        for _ in range(5):
            submit(book, w, 0, BID, ResourceKind.STONE, 2)
        assert w.agents[0].coin == 0.0 and w.agents[0].escrow_coin == 10.0
        for _ in range(51):
            book.step_expire(w)
        assert w.agents[0].coin == pytest.approx(10.0)
        assert w.agents[0].escrow_coin == 0.0


class TestObservation:
    def test_empty_book(self):
        book = OrderBook(4)
        view = market_observation(book, 0)
        for arr in (view.bids_own, view.asks_own, view.bids_other, view.asks_other,
                    view.trades_at_level):
            assert not arr.any()
        assert view.avg_trade_price == pytest.approx([0.0, 0.0])

    def test_own_vs_other_split(self):
        w = make_world()
        book = OrderBook(4)
        submit(book, w, 0, BID, ResourceKind.WOOD, 4)
        mine = market_observation(book, 0)
        assert mine.bids_own[int(ResourceKind.WOOD), 4] == 1
        assert not mine.bids_other.any()
        theirs = market_observation(book, 1)
        assert not theirs.bids_own.any()
        assert theirs.bids_other[int(ResourceKind.WOOD), 4] == 1

    def test_planner_sees_cumulative(self):
        w = make_world()
        book = OrderBook(4)
        submit(book, w, 0, BID, ResourceKind.WOOD, 4)
        submit(book, w, 1, BID, ResourceKind.WOOD, 2)
        view = market_observation(book, None)
        assert not view.bids_own.any()
        assert view.bids_other[int(ResourceKind.WOOD)].sum() == 2

    def test_average_trade_price(self):
        w = make_world()
        book = OrderBook(4)
        for price in (3, 3, 7):
            submit(book, w, 1, ASK, ResourceKind.WOOD, price)
            submit(book, w, 0, BID, ResourceKind.WOOD, price)
        view = market_observation(book, 0)
        assert view.avg_trade_price[int(ResourceKind.WOOD)] == pytest.approx(13 / 3)
        assert view.trades_at_level[int(ResourceKind.WOOD), 3] == 2
        assert view.trades_at_level[int(ResourceKind.WOOD), 7] == 1


class TestActionCoding:
    def test_total_and_first(self):
        assert N_TRADE_ACTIONS == 44
        o = trade_action_decode(0)
        assert (o.side, o.resource, o.price) == (BID, ResourceKind.WOOD, 0)

    def test_roundtrip_all(self):
        for idx in range(N_TRADE_ACTIONS):
            o = trade_action_decode(idx)
            assert trade_action_encode(o.side, o.resource, o.price) == idx

    def test_out_of_range(self):
        for idx in (-1, 44, 100):
            with pytest.raises(ValueError):
                trade_action_decode(idx)


class TestMatchingEquivalence:
    def run_stream(self, rng):
        n_agents = 4
        coins = rng.integers(0, 30, n_agents).astype(float)
        woods = rng.integers(0, 5, n_agents)
        stones = rng.integers(0, 5, n_agents)
        w = make_world(n_agents)
        for i, a in enumerate(w.agents):
            a.coin, a.wood, a.stone = float(coins[i]), int(woods[i]), int(stones[i])
        book = OrderBook(n_agents)
        ref = ReferenceMatcher(coins, woods, stones)
        n_orders = rng.integers(1, 21)
        for _ in range(n_orders):
            owner = int(rng.integers(n_agents))
            side = BID if rng.random() < 0.5 else ASK
            resource = ResourceKind(int(rng.integers(2)))
            price = int(rng.integers(0, 11))
            book.submit(w, Order(owner=owner, side=side, resource=resource, price=price))
            ref.submit(owner, side, resource, price)
        got = [
            (t.resource, t.price, t.buyer, t.seller, t.bid_sequence, t.ask_sequence)
            for t in book.trades
        ]
        return w, book, got, ref

    def test_equal_trade_sets_on_random_streams(self):
        rng = np.random.default_rng(2024)
        for _ in range(400):
            w, book, got, ref = self.run_stream(rng)
            assert got == ref.trades

    def test_coin_conserved_across_submit_match_expire(self):
        rng = np.random.default_rng(21)
        w = make_world(coin=20.0)
        book = OrderBook(4)
        total0 = sum(a.coin + a.escrow_coin for a in w.agents)
        for tick in range(200):
            for _ in range(rng.integers(0, 4)):
                book.submit(w, Order(
                    owner=int(rng.integers(4)),
                    side=BID if rng.random() < 0.5 else ASK,
                    resource=ResourceKind(int(rng.integers(2))),
                    price=int(rng.integers(0, 11)),
                ))
            book.step_expire(w)
            total = sum(a.coin + a.escrow_coin for a in w.agents)
            assert total == pytest.approx(total0, abs=1e-9)
        # Units conserved too: inventory + escrow is constant under trading.
        for kind in ResourceKind:
            held = w.units_held(kind)
            assert held == 4 * 5

    def test_invariants_on_random_streams(self):
        rng = np.random.default_rng(99)
        for _ in range(200):
            w, book, got, ref = self.run_stream(rng)
            # Coin conservation across inventory + escrow.
            total = sum(a.coin + a.escrow_coin for a in w.agents)
            assert total == pytest.approx(float(sum(ref.coin) + sum(
                o[2] for o in ref.resting if o[0] == BID)), abs=1e-9)
            # No crossed book at rest.
            for res in ResourceKind:
                bids = [o.price for o in book.open_orders if o.side == BID and o.resource == res]
                asks = [o.price for o in book.open_orders if o.side == ASK and o.resource == res]
                if bids and asks:
                    assert max(bids) < min(asks)
            # Executed price lies within [ask, bid] of the pair.
            for t in book.trades:
                assert t.ask_price <= t.price <= t.bid_price
