/** Thin WebSocket client with an injectable socket for testing. */

import { ClientMessage, parseServerMessage, ServerMessage } from "./protocol.js";

/** The subset of the WebSocket interface the console uses. */
export interface SocketLike {
  send(data: string): void;
  close(): void;
  onmessage: ((ev: { data: string | ArrayBuffer | Uint8Array }) => void) | null;
  onclose: (() => void) | null;
  onopen: (() => void) | null;
}

export interface ClientHandlers {
  onMessage(msg: ServerMessage): void;
  onFrame(bytes: Uint8Array): void;
  onClose(): void;
}

export class ConsoleClient {
  private socket: SocketLike;

  constructor(socket: SocketLike, handlers: ClientHandlers) {
    this.socket = socket;
    socket.onmessage = (ev) => {
      if (typeof ev.data === "string") {
        handlers.onMessage(parseServerMessage(ev.data));
      } else if (ev.data instanceof Uint8Array) {
        handlers.onFrame(ev.data);
      } else {
        handlers.onFrame(new Uint8Array(ev.data));
      }
    };
    socket.onclose = () => handlers.onClose();
  }

  send(msg: ClientMessage): void {
    this.socket.send(JSON.stringify(msg));
  }

  close(): void {
    this.socket.close();
  }
}
