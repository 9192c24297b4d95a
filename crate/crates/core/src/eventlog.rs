//! Append-only in-memory event log with live fan-out. A subscriber gets a
//! snapshot and a receiver taken under one lock, so replay followed by the
//! live stream has no gap and no duplicate.

use std::sync::Arc;

use parking_lot::Mutex;
use tokio::sync::broadcast;

struct State<T> {
    events: Vec<T>,
    closed: bool,
    tx: broadcast::Sender<T>,
}

pub struct EventLog<T: Clone> {
    state: Arc<Mutex<State<T>>>,
}

impl<T: Clone> Clone for EventLog<T> {
    fn clone(&self) -> Self {
        Self {
            state: self.state.clone(),
        }
    }
}

impl<T: Clone> Default for EventLog<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Clone> EventLog<T> {
    pub fn new() -> Self {
        let (tx, _) = broadcast::channel(4096);
        Self {
            state: Arc::new(Mutex::new(State {
                events: Vec::new(),
                closed: false,
                tx,
            })),
        }
    }

    pub fn push(&self, event: T) {
        let mut st = self.state.lock();
        st.events.push(event.clone());
        let _ = st.tx.send(event);
    }

    /// Marks the log complete; live receivers end after draining.
    pub fn close(&self) {
        let mut st = self.state.lock();
        st.closed = true;
        let (tx, _) = broadcast::channel(1);
        st.tx = tx;
    }

    pub fn is_closed(&self) -> bool {
        self.state.lock().closed
    }

    pub fn snapshot(&self) -> Vec<T> {
        self.state.lock().events.clone()
    }

    pub fn len(&self) -> usize {
        self.state.lock().events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Events so far plus a receiver for everything after them; the receiver
    /// is `None` once the log is closed.
    pub fn subscribe(&self) -> (Vec<T>, Option<broadcast::Receiver<T>>) {
        let st = self.state.lock();
        let rx = (!st.closed).then(|| st.tx.subscribe());
        (st.events.clone(), rx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[tokio::test]
    async fn replay_then_live_has_no_gap() {
        let log = EventLog::new();
        log.push(1);
        log.push(2);
        let (past, rx) = log.subscribe();
        let mut rx = rx.unwrap();
        log.push(3);
        log.close();
        assert_eq!(past, [1, 2]);
        assert_eq!(rx.recv().await.unwrap(), 3);
        assert!(rx.recv().await.is_err());
        assert!(log.subscribe().1.is_none());
    }
}
