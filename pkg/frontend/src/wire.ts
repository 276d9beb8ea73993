/** Split a protocol line into words.  The wire never quotes or
 *  escapes, so whitespace splitting is the entire grammar. */
export function words(line: string): string[] {
  return line.trim().split(/\s+/);
}

/** Number formatting for outgoing values.  JS already prints shortest
 *  round-trip; centralized so emission stays in one place. */
export function fmt(v: number): string {
  return String(v);
}
