//! Per-connection send queue. Replies are never dropped; when more than `capacity` frames
//! are waiting, the oldest queued frame is discarded so the newest state always gets through.

use std::collections::VecDeque;
use std::sync::Mutex;

use tokio::sync::Notify;

use crate::frame::Frame;

#[derive(Clone, Debug, PartialEq)]
pub enum Outgoing {
    Text(String),
    Frame(Frame),
}

#[derive(Debug, Default)]
struct Inner {
    queue: VecDeque<Outgoing>,
    frames: usize,
    dropped: u64,
    closed: bool,
}

#[derive(Debug)]
pub struct Outbox {
    inner: Mutex<Inner>,
    notify: Notify,
    capacity: usize,
}

impl Outbox {
    pub fn new(capacity: usize) -> Self {
        Self {
            inner: Mutex::new(Inner::default()),
            notify: Notify::new(),
            capacity: capacity.max(1),
        }
    }

    pub fn push_text(&self, text: String) {
        let mut inner = self.inner.lock().expect("outbox lock");
        inner.queue.push_back(Outgoing::Text(text));
        drop(inner);
        self.notify.notify_one();
    }

    pub fn push_frame(&self, frame: Frame) {
        let mut inner = self.inner.lock().expect("outbox lock");
        if inner.frames >= self.capacity {
            if let Some(i) = inner.queue.iter().position(|m| matches!(m, Outgoing::Frame(_))) {
                inner.queue.remove(i);
                inner.frames -= 1;
                inner.dropped += 1;
            }
        }
        inner.queue.push_back(Outgoing::Frame(frame));
        inner.frames += 1;
        drop(inner);
        self.notify.notify_one();
    }

    /// No more messages will be pushed; [`Outbox::next`] drains what is queued, then yields `None`.
    pub fn close(&self) {
        self.inner.lock().expect("outbox lock").closed = true;
        self.notify.notify_one();
    }

    pub fn dropped(&self) -> u64 {
        self.inner.lock().expect("outbox lock").dropped
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("outbox lock").queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub async fn next(&self) -> Option<Outgoing> {
        loop {
            {
                let mut inner = self.inner.lock().expect("outbox lock");
                if let Some(m) = inner.queue.pop_front() {
                    if matches!(m, Outgoing::Frame(_)) {
                        inner.frames -= 1;
                    }
                    return Some(m);
                }
                if inner.closed {
                    return None;
                }
            }
            self.notify.notified().await;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(seq: u64) -> Frame {
        Frame { session: 1, step: seq, seq, height: 1, width: 1, cells: vec![0] }
    }

    #[tokio::test]
    async fn overflow_drops_oldest_frames_only() {
        let b = Outbox::new(3);
        b.push_text("a".into());
        for s in 1..=10 {
            b.push_frame(frame(s));
        }
        b.push_text("b".into());
        b.close();
        let mut got = Vec::new();
        while let Some(m) = b.next().await {
            got.push(m);
        }
        assert_eq!(
            got,
            vec![
                Outgoing::Text("a".into()),
                Outgoing::Frame(frame(8)),
                Outgoing::Frame(frame(9)),
                Outgoing::Frame(frame(10)),
                Outgoing::Text("b".into()),
            ]
        );
        assert_eq!(b.dropped(), 7);
    }

    #[tokio::test]
    async fn waiting_reader_wakes_on_push() {
        let b = std::sync::Arc::new(Outbox::new(4));
        let r = b.clone();
        let h = tokio::spawn(async move { r.next().await });
        tokio::task::yield_now().await;
        b.push_frame(frame(1));
        assert_eq!(h.await.unwrap(), Some(Outgoing::Frame(frame(1))));
    }
}
