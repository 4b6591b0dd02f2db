import { describe, expect, it } from "vitest";

import { InputThrottle, actionForKey } from "../src/input.js";

describe("key bindings", () => {
  it("maps arrows and wasd to moves", () => {
    expect(actionForKey("ArrowUp")).toBe("up");
    expect(actionForKey("ArrowDown")).toBe("down");
    expect(actionForKey("KeyA")).toBe("left");
    expect(actionForKey("KeyD")).toBe("right");
    expect(actionForKey("KeyB")).toBe("build");
  });

  it("ignores unbound keys", () => {
    expect(actionForKey("Space")).toBeNull();
    expect(actionForKey("Escape")).toBeNull();
  });
});

describe("per-tick throttle", () => {
  it("keeps only the latest key within a tick", () => {
    const throttle = new InputThrottle();
    throttle.setGate(true);
    expect(throttle.capture("ArrowUp")).toBe(true);
    expect(throttle.capture("ArrowLeft")).toBe(true);
    expect(throttle.drain()).toBe("left");
    expect(throttle.drain()).toBeNull();
  });

  it("emits nothing outside the playing phase", () => {
    const throttle = new InputThrottle();
    throttle.setGate(false);
    expect(throttle.capture("ArrowUp")).toBe(false);
    expect(throttle.drain()).toBeNull();
  });

  it("drops buffered input when the gate closes", () => {
    const throttle = new InputThrottle();
    throttle.setGate(true);
    throttle.capture("ArrowUp");
    throttle.setGate(false);    // e.g. survey phase begins
    expect(throttle.drain()).toBeNull();
  });
});
