use std::time::Duration;

use tokio::sync::Mutex;
use tokio::time::Instant;

/// Token bucket holding up to one minute's budget, refilled continuously.
#[derive(Debug)]
pub(crate) struct TokenBucket {
    state: Mutex<(f64, Instant)>,
    capacity: f64,
    per_sec: f64,
}

impl TokenBucket {
    pub(crate) fn per_minute(rpm: u32) -> Self {
        let capacity = f64::from(rpm.max(1));
        TokenBucket {
            state: Mutex::new((capacity, Instant::now())),
            capacity,
            per_sec: capacity / 60.0,
        }
    }

    pub(crate) async fn acquire(&self) {
        loop {
            let wait = {
                let mut st = self.state.lock().await;
                let now = Instant::now();
                let elapsed = now.duration_since(st.1).as_secs_f64();
                st.0 = (st.0 + elapsed * self.per_sec).min(self.capacity);
                st.1 = now;
                if st.0 >= 1.0 {
                    st.0 -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - st.0) / self.per_sec)
            };
            tokio::time::sleep(wait).await;
        }
    }
}
