//! Ground-truth network between endpoints and between the client and endpoints.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Link {
    /// Bytes per second.
    pub bandwidth: f64,
    /// Seconds before the first byte moves.
    pub latency: f64,
    /// Slowdown per extra concurrent stream on the same ordered pair.
    pub concurrency_penalty: f64,
}

impl Link {
    pub fn new(bandwidth: f64, latency: f64) -> Self {
        Self {
            bandwidth,
            latency,
            concurrency_penalty: 1.0,
        }
    }

    /// Multiplier applied to the byte-moving phase with `concurrent` streams.
    pub fn stream_factor(&self, concurrent: usize) -> f64 {
        1.0 + (self.concurrency_penalty - 1.0) * concurrent.saturating_sub(1) as f64
    }

    /// Latency plus the time to move `size` bytes.
    pub fn transfer_time(&self, size: u64, concurrent: usize) -> f64 {
        self.latency + size as f64 * self.stream_factor(concurrent) / self.bandwidth
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    n: usize,
    links: Vec<Option<Link>>,
    pub dispatch_latency: f64,
}

impl NetworkModel {
    pub fn new(endpoints: usize, dispatch_latency: f64) -> Self {
        Self {
            n: endpoints,
            links: vec![None; endpoints * endpoints],
            dispatch_latency,
        }
    }

    pub fn endpoints(&self) -> usize {
        self.n
    }

    pub fn set_link(&mut self, src: usize, dst: usize, link: Link) {
        self.links[src * self.n + dst] = Some(link);
    }

    pub fn link(&self, src: usize, dst: usize) -> Option<&Link> {
        self.links.get(src * self.n + dst).and_then(|l| l.as_ref())
    }

    /// Returns `(latency, total duration)` for one transfer, or `None` for an
    /// undeclared pair.
    pub fn transfer(&self, src: usize, dst: usize, size: u64, concurrent: usize) -> Option<(f64, f64)> {
        if src == dst {
            return Some((0.0, 0.0));
        }
        self.link(src, dst)
            .map(|l| (l.latency, l.transfer_time(size, concurrent)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gigabyte_over_hundred_megabytes_per_second() {
        let link = Link::new(100e6, 0.1);
        assert!((link.transfer_time(1_000_000_000, 1) - 10.1).abs() < 1e-12);
        let slowed = Link {
            concurrency_penalty: 2.0,
            ..link
        };
        assert!((slowed.transfer_time(1_000_000_000, 2) - 20.1).abs() < 1e-12);
    }

    #[test]
    fn same_endpoint_is_free() {
        let net = NetworkModel::new(2, 0.0);
        assert_eq!(net.transfer(1, 1, 1 << 30, 1), Some((0.0, 0.0)));
        assert_eq!(net.transfer(0, 1, 10, 1), None);
    }
}
