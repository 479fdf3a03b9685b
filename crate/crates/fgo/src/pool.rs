//! Bounded scoped-thread map that returns results in input order.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

/// Applies `f` to every item on at most `workers` threads. Results come
/// back in input order regardless of completion order.
pub fn map_ordered<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let workers = workers.max(1).min(items.len());
    if workers <= 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(i, &items[i]);
                slots.lock().expect("pool poisoned")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("pool poisoned")
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration;

    #[test]
    fn keeps_input_order() {
        let items: Vec<u64> = (0..40).collect();
        let out = map_ordered(&items, 6, |i, x| {
            thread::sleep(Duration::from_micros((40 - x) * 50));
            (i, x * 2)
        });
        assert_eq!(out, items.iter().map(|x| (*x as usize, x * 2)).collect::<Vec<_>>());
    }

    #[test]
    fn empty_and_single() {
        assert!(map_ordered(&[] as &[u8], 4, |_, x| *x).is_empty());
        assert_eq!(map_ordered(&[7u8], 4, |_, x| *x + 1), vec![8]);
    }
}
