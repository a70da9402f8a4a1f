//! Thread-local recording state.
//!
//! Every tensor operation executed while recording is enabled appends a node
//! to the implicit tape of the current thread. Node ids grow monotonically,
//! so sorting by id yields a topological order. A backward pass run with
//! `create_graph = true` records its own operations one generation higher,
//! which is what makes gradients of gradients available.

use std::cell::{Cell, RefCell};

pub(crate) struct TapeState {
    next_id: Cell<u64>,
    recording: Cell<bool>,
    generation: Cell<u32>,
    nan_guard: Cell<bool>,
    first_nonfinite: RefCell<Option<NonFiniteReport>>,
}

/// First node that produced a NaN or infinite value while the guard was on.
#[derive(Clone, Debug, PartialEq)]
pub struct NonFiniteReport {
    pub node_id: u64,
    pub op: &'static str,
    pub generation: u32,
}

thread_local! {
    static TAPE: TapeState = const {
        TapeState {
            next_id: Cell::new(0),
            recording: Cell::new(true),
            generation: Cell::new(0),
            nan_guard: Cell::new(false),
            first_nonfinite: RefCell::new(None),
        }
    };
}

pub(crate) fn next_id() -> u64 {
    TAPE.with(|t| {
        let id = t.next_id.get();
        t.next_id.set(id + 1);
        id
    })
}

pub(crate) fn is_recording() -> bool {
    TAPE.with(|t| t.recording.get())
}

pub(crate) fn generation() -> u32 {
    TAPE.with(|t| t.generation.get())
}

pub(crate) fn nan_guard_enabled() -> bool {
    TAPE.with(|t| t.nan_guard.get())
}

pub(crate) fn report_nonfinite(node_id: u64, op: &'static str) {
    TAPE.with(|t| {
        let mut slot = t.first_nonfinite.borrow_mut();
        if slot.is_none() {
            *slot = Some(NonFiniteReport { node_id, op, generation: t.generation.get() });
        }
    })
}

/// Handle on the current thread's tape settings.
pub struct Tape;

impl Tape {
    /// Runs `f` with recording disabled: results carry no graph.
    pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
        Self::with_recording(false, f)
    }

    pub(crate) fn with_recording<R>(on: bool, f: impl FnOnce() -> R) -> R {
        let prev = TAPE.with(|t| t.recording.replace(on));
        let guard = Restore(move || TAPE.with(|t| t.recording.set(prev)));
        let out = f();
        drop(guard);
        out
    }

    /// Runs `f` one generation deeper (used while recording a backward pass).
    pub(crate) fn next_generation<R>(f: impl FnOnce() -> R) -> R {
        let prev = TAPE.with(|t| {
            let g = t.generation.get();
            t.generation.set(g + 1);
            g
        });
        let guard = Restore(move || TAPE.with(|t| t.generation.set(prev)));
        let out = f();
        drop(guard);
        out
    }

    /// Turns the NaN/Inf guard on or off and clears any previous report.
    pub fn set_nan_guard(on: bool) {
        TAPE.with(|t| {
            t.nan_guard.set(on);
            t.first_nonfinite.borrow_mut().take();
        })
    }

    /// Takes the first non-finite node observed since the guard was enabled.
    pub fn take_nonfinite() -> Option<NonFiniteReport> {
        TAPE.with(|t| t.first_nonfinite.borrow_mut().take())
    }

    pub fn is_recording() -> bool {
        is_recording()
    }

    pub fn generation() -> u32 {
        generation()
    }
}

struct Restore<F: FnMut()>(F);

impl<F: FnMut()> Drop for Restore<F> {
    fn drop(&mut self) {
        (self.0)()
    }
}
