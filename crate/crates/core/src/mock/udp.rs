use std::sync::Arc;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use tokio::net::UdpSocket;

use super::{DropPolicy, Shared};
use crate::protocol::ProtocolKind;

struct Dropper {
    policy: DropPolicy,
    seen: u64,
    rng: StdRng,
}

impl Dropper {
    fn new(policy: DropPolicy) -> Self {
        let seed = match policy {
            DropPolicy::Probability { seed, .. } => seed,
            _ => 0,
        };
        Self {
            policy,
            seen: 0,
            rng: StdRng::seed_from_u64(seed),
        }
    }

    fn drop_next(&mut self) -> bool {
        self.seen += 1;
        match self.policy {
            DropPolicy::None => false,
            DropPolicy::FirstN(n) => self.seen <= n,
            DropPolicy::Probability { p, .. } => self.rng.gen_bool(p),
        }
    }
}

pub(crate) async fn run(shared: Arc<Shared>, sock: UdpSocket) {
    let sock = Arc::new(sock);
    let mut dropper = Dropper::new(shared.config.udp_drop);
    let mut buf = vec![0u8; 65535];
    loop {
        let Ok((n, from)) = sock.recv_from(&mut buf).await else {
            continue;
        };
        shared.counters.datagram_received(ProtocolKind::DoUdp);
        if dropper.drop_next() {
            continue;
        }
        let query = buf[..n].to_vec();
        let shared = shared.clone();
        let sock = sock.clone();
        tokio::spawn(async move {
            let delay = shared.config.one_way_delay;
            tokio::time::sleep(delay).await;
            let Some(resp) = shared.config.zone.answer(&query) else {
                return;
            };
            shared.counters.query_answered(ProtocolKind::DoUdp);
            tokio::time::sleep(delay).await;
            let _ = sock.send_to(&resp, from).await;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drop_policies() {
        let mut d = Dropper::new(DropPolicy::FirstN(2));
        assert_eq!(
            (d.drop_next(), d.drop_next(), d.drop_next()),
            (true, true, false)
        );
        let mut a = Dropper::new(DropPolicy::Probability { p: 0.5, seed: 3 });
        let mut b = Dropper::new(DropPolicy::Probability { p: 0.5, seed: 3 });
        let xs: Vec<bool> = (0..32).map(|_| a.drop_next()).collect();
        let ys: Vec<bool> = (0..32).map(|_| b.drop_next()).collect();
        assert_eq!(xs, ys);
        assert!(!Dropper::new(DropPolicy::None).drop_next());
    }
}
