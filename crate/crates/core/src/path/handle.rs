use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use super::PathId;
use crate::error::{MpwError, Result};

static NEXT_HANDLE: AtomicU64 = AtomicU64::new(1);

/// Names one in-flight non-blocking exchange.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TransferHandle {
    id: u64,
    path: PathId,
}

impl TransferHandle {
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn path(&self) -> PathId {
        self.path
    }
}

#[derive(Debug)]
enum State {
    InFlight,
    Finished(Vec<u8>),
    Failed(MpwError),
    Consumed,
}

#[derive(Debug)]
pub(crate) struct Slot {
    state: Mutex<State>,
    done: Condvar,
}

impl Slot {
    pub fn complete(&self, result: Result<Vec<u8>>) {
        let mut state = self.state.lock().unwrap();
        *state = match result {
            Ok(buf) => State::Finished(buf),
            Err(e) => State::Failed(e),
        };
        self.done.notify_all();
    }
}

#[derive(Debug, Default)]
pub(crate) struct HandleTable {
    slots: Mutex<HashMap<u64, Arc<Slot>>>,
}

impl HandleTable {
    pub fn insert(&self, path: PathId) -> (TransferHandle, Arc<Slot>) {
        let handle = TransferHandle {
            id: NEXT_HANDLE.fetch_add(1, Ordering::Relaxed),
            path,
        };
        let slot = Arc::new(Slot {
            state: Mutex::new(State::InFlight),
            done: Condvar::new(),
        });
        self.slots.lock().unwrap().insert(handle.id, slot.clone());
        (handle, slot)
    }

    pub fn forget(&self, handle: TransferHandle) {
        self.slots.lock().unwrap().remove(&handle.id);
    }

    fn slot(&self, handle: TransferHandle) -> Result<Arc<Slot>> {
        self.slots
            .lock()
            .unwrap()
            .get(&handle.id)
            .cloned()
            .ok_or(MpwError::UnknownHandle(handle.id))
    }

    pub fn has_finished(&self, handle: TransferHandle) -> Result<bool> {
        let slot = self.slot(handle)?;
        let state = slot.state.lock().unwrap();
        match *state {
            State::InFlight => Ok(false),
            State::Finished(_) | State::Failed(_) => Ok(true),
            State::Consumed => Err(MpwError::HandleConsumed(handle.id)),
        }
    }

    pub fn wait(&self, handle: TransferHandle) -> Result<Vec<u8>> {
        let slot = self.slot(handle)?;
        let mut state = slot.state.lock().unwrap();
        while matches!(*state, State::InFlight) {
            state = slot.done.wait(state).unwrap();
        }
        match std::mem::replace(&mut *state, State::Consumed) {
            State::Finished(buf) => Ok(buf),
            State::Failed(e) => Err(MpwError::TransferFailed {
                handle: handle.id,
                source: Box::new(e),
            }),
            State::Consumed => Err(MpwError::HandleConsumed(handle.id)),
            State::InFlight => unreachable!(),
        }
    }

    pub fn clear(&self) {
        self.slots.lock().unwrap().clear();
    }
}
