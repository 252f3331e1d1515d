//! Discrete decisions taken by piecewise layers (ReLU gates, max-pool
//! winners, the spatial recurrence's ReLU) can be observed and pinned.
//!
//! * [`trace`] hashes every decision made while a closure runs, so two
//!   evaluations can be compared for a kink crossing.
//! * [`record`] keeps the decisions themselves as a [`Tape`], and
//!   [`replay`] re-runs a closure with every gated layer forced to take the
//!   taped decisions instead of its own. Under replay the network is the
//!   smooth function that coincides with the real one on the recorded
//!   linear piece, which is what an analytic backward differentiates.
//!
//! Everything is off unless a trace, recording or replay is active on the
//! current thread; gated layers make their decisions on the calling thread.

use std::cell::RefCell;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Decisions of one gated op: packed bits for ReLU gates, flat input
/// indices for max-pool winners.
#[derive(Clone, Debug, PartialEq, Eq)]
enum Entry {
    Bits(Vec<bool>),
    Indices(Vec<usize>),
}

/// Every gated decision of one evaluation, in execution order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Tape {
    entries: Vec<Entry>,
}

impl Tape {
    /// Number of gated ops recorded.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

enum State {
    Off,
    Hash(u64),
    Record(Tape),
    Replay {
        tape: Tape,
        pos: usize,
        mismatch: bool,
    },
}

thread_local! {
    static STATE: RefCell<State> = const { RefCell::new(State::Off) };
}

fn scoped<R>(state: State, f: impl FnOnce() -> R) -> (R, State) {
    let outer = STATE.with(|s| s.replace(state));
    let result = f();
    (result, STATE.with(|s| s.replace(outer)))
}

/// Run `f` and return its result with a hash of every gate decision made.
pub fn trace<R>(f: impl FnOnce() -> R) -> (R, u64) {
    match scoped(State::Hash(FNV_OFFSET), f) {
        (r, State::Hash(h)) => (r, h),
        (r, _) => (r, FNV_OFFSET),
    }
}

/// Run `f` and return its result with the decisions it made.
pub fn record<R>(f: impl FnOnce() -> R) -> (R, Tape) {
    match scoped(State::Record(Tape::default()), f) {
        (r, State::Record(t)) => (r, t),
        (r, _) => (r, Tape::default()),
    }
}

/// Run `f` with every gated op taking the taped decisions. The flag is
/// false when `f` did not consume the tape exactly (a different op sequence
/// or shape), in which case the natural decisions were used where the tape
/// did not fit.
pub fn replay<R>(tape: &Tape, f: impl FnOnce() -> R) -> (R, bool) {
    let state = State::Replay {
        tape: tape.clone(),
        pos: 0,
        mismatch: false,
    };
    match scoped(state, f) {
        (r, State::Replay { tape, pos, mismatch }) => (r, !mismatch && pos == tape.len()),
        (r, _) => (r, false),
    }
}

pub(crate) fn active() -> bool {
    STATE.with(|s| !matches!(*s.borrow(), State::Off))
}

fn hash(h: &mut u64, words: impl IntoIterator<Item = u64>) {
    for word in words {
        for byte in word.to_le_bytes() {
            *h ^= byte as u64;
            *h = h.wrapping_mul(FNV_PRIME);
        }
    }
}

fn pack(bits: &[bool]) -> impl Iterator<Item = u64> + '_ {
    bits.chunks(64)
        .map(|c| c.iter().fold(0u64, |w, &b| (w << 1) | b as u64) ^ ((c.len() as u64) << 56))
        .chain(std::iter::once(bits.len() as u64))
}

/// Takes the next taped entry if it has the expected kind and length.
fn next_taped(state: &mut State, fits: impl Fn(&Entry) -> bool) -> Option<Entry> {
    let State::Replay { tape, pos, mismatch } = state else {
        return None;
    };
    match tape.entries.get(*pos) {
        Some(e) if fits(e) => {
            *pos += 1;
            Some(e.clone())
        }
        _ => {
            *mismatch = true;
            None
        }
    }
}

/// ReLU-style gate: `natural` holds the decisions the op would take on its
/// own. Returns the decisions to apply: the natural ones, or the taped
/// ones under [`replay`].
pub(crate) fn bits(natural: Vec<bool>) -> Vec<bool> {
    STATE.with(|s| {
        let mut s = s.borrow_mut();
        match &mut *s {
            State::Off => natural,
            State::Hash(h) => {
                hash(h, pack(&natural));
                natural
            }
            State::Record(t) => {
                t.entries.push(Entry::Bits(natural.clone()));
                natural
            }
            State::Replay { .. } => {
                let n = natural.len();
                match next_taped(&mut s, |e| matches!(e, Entry::Bits(b) if b.len() == n)) {
                    Some(Entry::Bits(b)) => b,
                    _ => natural,
                }
            }
        }
    })
}

/// Arg-max style gate over flat indices, same contract as [`bits`].
pub(crate) fn indices(natural: Vec<usize>) -> Vec<usize> {
    STATE.with(|s| {
        let mut s = s.borrow_mut();
        match &mut *s {
            State::Off => natural,
            State::Hash(h) => {
                hash(h, natural.iter().map(|&i| i as u64).chain(std::iter::once(natural.len() as u64)));
                natural
            }
            State::Record(t) => {
                t.entries.push(Entry::Indices(natural.clone()));
                natural
            }
            State::Replay { .. } => {
                let n = natural.len();
                match next_taped(&mut s, |e| matches!(e, Entry::Indices(v) if v.len() == n)) {
                    Some(Entry::Indices(v)) => v,
                    _ => natural,
                }
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_distinguishes_decisions_and_nests() {
        let (_, a) = trace(|| bits(vec![true, false, true]));
        let (_, b) = trace(|| bits(vec![true, true, true]));
        let (_, c) = trace(|| bits(vec![true, false, true]));
        assert_ne!(a, b);
        assert_eq!(a, c);
        let (inner, outer) = trace(|| {
            bits(vec![true]);
            trace(|| bits(vec![false])).1
        });
        assert_ne!(inner, outer);
        assert!(!active());
    }

    #[test]
    fn replay_substitutes_taped_decisions() {
        let (_, tape) = record(|| (bits(vec![true, false]), indices(vec![3, 1])));
        assert_eq!(tape.len(), 2);
        let ((b, i), ok) = replay(&tape, || (bits(vec![false, false]), indices(vec![0, 0])));
        assert!(ok);
        assert_eq!((b, i), (vec![true, false], vec![3, 1]));
        // a different op sequence is reported and falls back to natural
        let (b, ok) = replay(&tape, || bits(vec![false; 3]));
        assert!(!ok);
        assert_eq!(b, vec![false; 3]);
        let (_, ok) = replay(&tape, || bits(vec![false, false]));
        assert!(!ok, "unconsumed tape");
    }

    #[test]
    fn off_by_default() {
        assert_eq!(bits(vec![true]), vec![true]);
        assert!(!active());
    }
}
