use std::time::Duration;

use tokio::time::Instant;

/// Token bucket pacing probe emission.
#[derive(Debug)]
pub struct TokenBucket {
    rate_per_sec: f64,
    capacity: f64,
    tokens: f64,
    last: Instant,
}

impl TokenBucket {
    /// `burst` tokens are available up front; at least one is always allowed.
    pub fn new(rate_per_sec: f64, burst: u32) -> Self {
        assert!(rate_per_sec > 0.0, "rate must be positive");
        let capacity = f64::from(burst.max(1));
        Self {
            rate_per_sec,
            capacity,
            tokens: capacity,
            last: Instant::now(),
        }
    }

    fn refill(&mut self) {
        let now = Instant::now();
        let gained = (now - self.last).as_secs_f64() * self.rate_per_sec;
        self.tokens = (self.tokens + gained).min(self.capacity);
        self.last = now;
    }

    pub fn try_acquire(&mut self) -> bool {
        self.refill();
        if self.tokens >= 1.0 {
            self.tokens -= 1.0;
            true
        } else {
            false
        }
    }

    /// Waits until a token is available and takes it.
    pub async fn acquire(&mut self) {
        loop {
            if self.try_acquire() {
                return;
            }
            let deficit = 1.0 - self.tokens;
            tokio::time::sleep(Duration::from_secs_f64(deficit / self.rate_per_sec)).await;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[tokio::test(start_paused = true)]
    async fn paces_to_the_configured_rate() {
        let mut bucket = TokenBucket::new(100.0, 1);
        let start = Instant::now();
        for _ in 0..201 {
            bucket.acquire().await;
        }
        let elapsed = start.elapsed().as_secs_f64();
        assert!((elapsed - 2.0).abs() < 0.05, "elapsed {elapsed}");
    }

    #[tokio::test(start_paused = true)]
    async fn burst_is_spent_first() {
        let mut bucket = TokenBucket::new(1.0, 3);
        assert!(bucket.try_acquire());
        assert!(bucket.try_acquire());
        assert!(bucket.try_acquire());
        assert!(!bucket.try_acquire());
    }
}
