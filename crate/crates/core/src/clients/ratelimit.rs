use std::sync::Mutex;
use std::time::{Duration, Instant};

/// Token bucket shared by every client built from the same configuration.
#[derive(Debug)]
pub struct RateLimiter {
    per_second: f64,
    burst: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn new(per_second: f64) -> Self {
        let burst = per_second.max(1.0);
        Self {
            per_second,
            burst,
            state: Mutex::new((burst, Instant::now())),
        }
    }

    /// Blocks until a request token is available. Non-positive rates disable limiting.
    pub fn acquire(&self) {
        if self.per_second.is_nan() || self.per_second <= 0.0 {
            return;
        }
        loop {
            let wait = {
                let mut st = self.state.lock().expect("rate limiter poisoned");
                let now = Instant::now();
                let refill = now.duration_since(st.1).as_secs_f64() * self.per_second;
                st.0 = (st.0 + refill).min(self.burst);
                st.1 = now;
                if st.0 >= 1.0 {
                    st.0 -= 1.0;
                    return;
                }
                (1.0 - st.0) / self.per_second
            };
            std::thread::sleep(Duration::from_secs_f64(wait));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn throttles_beyond_burst() {
        let rl = RateLimiter::new(50.0);
        let t = Instant::now();
        for _ in 0..60 {
            rl.acquire();
        }
        // 50 tokens up front, 10 more at 50/s.
        assert!(t.elapsed() >= Duration::from_millis(150));
    }

    #[test]
    fn zero_rate_is_unlimited() {
        let rl = RateLimiter::new(0.0);
        for _ in 0..1000 {
            rl.acquire();
        }
    }
}
