//! Benchmark fixtures.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ttnheom::scenarios::{self, Instance};
use ttnheom::{TopologyKind, TreeTopology, TtnState};

/// The reduced bath (K = 4) at depth 8 with a random state of uniform rank.
pub fn reduced_fixture(rank: usize) -> (Instance, Arc<TreeTopology>, TtnState) {
    let inst = scenarios::reduced(0.0, 1000.0, 8).expect("instance");
    let topo = inst.topology(TopologyKind::Balanced).expect("topology");
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let st = TtnState::random(topo.clone(), &topo.uniform_ranks(rank), &mut rng).expect("state");
    (inst, topo, st)
}
