/**
 * Transport-agnostic client core: one socket, serialized message handling,
 * per-tick input pumping. Used by both the browser entry point and the
 * scripted headless client.
 */

import { InputThrottle } from "./input.js";
import {
  Message,
  PlayerAction,
  ProtocolError,
  actionMessage,
  decode,
  encode,
  hello,
  surveyAnswers,
} from "./protocol.js";
import { ClientView, handleMessage, initialView, isServerMessage } from "./state.js";

export interface SocketLike {
  send(data: string): void;
  close(): void;
}

export interface ClientEvents {
  onView?: (view: ClientView, msg: Message) => void;
  onProtocolError?: (err: Error) => void;
}

export class GameClient {
  readonly view: ClientView = initialView();
  readonly throttle = new InputThrottle();
  protocolErrors = 0;

  constructor(
    private socket: SocketLike,
    private token: string,
    private events: ClientEvents = {},
  ) {}

  greet() {
    this.socket.send(encode(hello(this.token)));
  }

  handleRaw(text: string) {
    let msg: Message;
    try {
      msg = decode(text);
      if (!isServerMessage(msg)) {
        throw new ProtocolError(`unexpected client-bound ${msg.type}`);
      }
      handleMessage(this.view, msg);
    } catch (err) {
      this.protocolErrors += 1;
      this.events.onProtocolError?.(err as Error);
      return;
    }
    this.throttle.setGate(this.view.phase === "playing");
    if (msg.type === "state_delta") {
      this.pumpInput();
    }
    this.events.onView?.(this.view, msg);
  }

  /** Send at most one buffered action per server tick. */
  pumpInput() {
    const action = this.throttle.drain();
    if (action !== null && this.view.phase === "playing") {
      this.sendAction(action);
    }
  }

  sendAction(action: PlayerAction) {
    this.socket.send(encode(actionMessage(action)));
  }

  keydown(code: string): boolean {
    return this.throttle.capture(code);
  }

  submitSurvey(answers: Record<string, string>) {
    this.socket.send(encode(surveyAnswers(answers)));
  }
}
