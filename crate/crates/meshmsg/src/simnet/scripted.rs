//! Adversary-scripted execution: honest nodes run the real protocol over
//! per-round topologies chosen by a script, while a malicious coalition
//! injects raw packets and records everything it can see. The security games
//! drive this engine.
//!
//! Observations mirror a radio eavesdropper with rogue participants: every
//! transmission's metadata (tick, endpoints, kind, size) is visible, and
//! payload bytes are captured whenever a malicious node is the receiver.

use std::collections::BTreeSet;

use crate::node::{Accepted, Envelope, EnvelopeKind, NodeState, Recipient, Sent};
use crate::simnet::{comm_id_for, EventRecord, SimError, TopologySnapshot};

/// Raw bytes a malicious node pushes at an honest neighbor this round.
#[derive(Clone, Debug)]
pub struct Injection {
    pub from: u32,
    pub to: u32,
    pub packet: Vec<u8>,
}

/// One round of scripted input.
#[derive(Clone, Debug, Default)]
pub struct RoundInput {
    pub edges: Vec<(u32, u32)>,
    /// Plaintexts queued on honest senders before the round's tick runs.
    pub honest_sends: Vec<(u32, Recipient, crate::crypto::Plaintext)>,
    pub injections: Vec<Injection>,
}

/// What the malicious coalition sees of one logged transmission.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub tick: u64,
    pub sender: u32,
    pub receiver: u32,
    pub kind: EnvelopeKind,
    pub size_bytes: u32,
    /// Present iff the receiver is malicious.
    pub payload: Option<Vec<u8>>,
}

impl Observation {
    /// The metadata-invariance projection.
    pub fn project(&self) -> (u64, u32, u32, EnvelopeKind, u32) {
        (self.tick, self.sender, self.receiver, self.kind, self.size_bytes)
    }
}

/// Everything one round surfaced to the challenger.
#[derive(Debug, Default)]
pub struct RoundOutcome {
    /// Successful decryptions at honest nodes, before friend filtering.
    pub accepted: Vec<(u32, Accepted)>,
    /// Scheduled (slot) sends, dummy or real, per honest node.
    pub sent: Vec<(u32, Sent)>,
}

/// A network of honest node slots (`None` marks a malicious seat) advanced
/// round by round under scripted topologies.
pub struct ScriptedNet {
    nodes: Vec<Option<NodeState>>,
    malicious: BTreeSet<u32>,
    mailboxes: Vec<Vec<Envelope>>,
    tick: u64,
    tick_ms: u64,
    transmission_counter: u64,
    meta_counter: u64,
    events: Vec<EventRecord>,
    observations: Vec<Observation>,
}

impl ScriptedNet {
    pub fn new(nodes: Vec<Option<NodeState>>, tick_ms: u64) -> Self {
        let malicious = nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.is_none().then_some(i as u32))
            .collect();
        let len = nodes.len();
        Self {
            nodes,
            malicious,
            mailboxes: vec![Vec::new(); len],
            tick: 0,
            tick_ms,
            transmission_counter: 0,
            meta_counter: 0,
            events: Vec::new(),
            observations: Vec::new(),
        }
    }

    pub fn devices(&self) -> u32 {
        self.nodes.len() as u32
    }

    pub fn malicious(&self) -> &BTreeSet<u32> {
        &self.malicious
    }

    pub fn node(&self, id: u32) -> Option<&NodeState> {
        self.nodes.get(id as usize).and_then(|n| n.as_ref())
    }

    pub fn node_mut(&mut self, id: u32) -> Option<&mut NodeState> {
        self.nodes.get_mut(id as usize).and_then(|n| n.as_mut())
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.events
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn into_observations(self) -> Vec<Observation> {
        self.observations
    }

    /// Runs one round: queue scripted sends, tick every honest node against
    /// last round's mail, broadcast their output over this round's edges,
    /// then deliver malicious injections along existing edges.
    pub fn step(&mut self, input: &RoundInput) -> Result<RoundOutcome, SimError> {
        let devices = self.devices();
        let topo = TopologySnapshot::from_edges(self.tick, devices, &input.edges);
        let adjacency = topo.adjacency(devices);
        let now = self.tick * self.tick_ms;
        let mut outcome = RoundOutcome::default();
        let mut next_mail: Vec<Vec<Envelope>> = vec![Vec::new(); devices as usize];

        for (sender, recipient, plaintext) in &input.honest_sends {
            let node = self
                .nodes
                .get_mut(*sender as usize)
                .and_then(|n| n.as_mut())
                .ok_or(SimError::UnknownNode(*sender))?;
            node.queue_send_plaintext(recipient.clone(), plaintext.clone())
                .map_err(|_| SimError::BadConfig("scripted send to unknown recipient"))?;
        }

        for i in 0..devices as usize {
            let Some(node) = self.nodes[i].as_mut() else {
                continue;
            };
            let inbound = std::mem::take(&mut self.mailboxes[i]);
            let out = node.tick(now, &inbound);
            for (node_id, acc) in out.accepted.into_iter().map(|a| (i as u32, a)) {
                outcome.accepted.push((node_id, acc));
            }
            if let Some(sent) = out.sent {
                outcome.sent.push((i as u32, sent));
            }
            for env in out.outbound {
                self.transmission_counter += 1;
                let comm_id = comm_id_for(&env, &mut self.meta_counter);
                let size = env.wire_size() as u32;
                for &nb in &adjacency[i] {
                    self.events.push(EventRecord {
                        sender_id: i as u32,
                        receiver_id: nb,
                        comm_type: env.kind(),
                        comm_id: comm_id.clone(),
                        transmission_id: self.transmission_counter,
                        size_bytes: size,
                        timestamp_ms: now,
                    });
                    let malicious_receiver = self.malicious.contains(&nb);
                    self.observations.push(Observation {
                        tick: self.tick,
                        sender: i as u32,
                        receiver: nb,
                        kind: env.kind(),
                        size_bytes: size,
                        payload: malicious_receiver.then(|| env.encode()),
                    });
                    if !malicious_receiver {
                        next_mail[nb as usize].push(env.clone());
                    }
                }
            }
        }

        // Malicious packets ride the same topology: deliverable only along a
        // current edge, and only as MESSAGE-shaped traffic.
        for inj in &input.injections {
            if !self.malicious.contains(&inj.from) {
                return Err(SimError::BadConfig("injection from a non-malicious node"));
            }
            let linked = adjacency
                .get(inj.from as usize)
                .map(|nbs| nbs.contains(&inj.to))
                .unwrap_or(false);
            if !linked {
                continue;
            }
            self.transmission_counter += 1;
            self.events.push(EventRecord {
                sender_id: inj.from,
                receiver_id: inj.to,
                comm_type: EnvelopeKind::Message,
                comm_id: crate::simnet::CommId::Packets(vec![
                    crate::digest::MessageId::of_packet(&inj.packet).short(),
                ]),
                transmission_id: self.transmission_counter,
                size_bytes: inj.packet.len() as u32,
                timestamp_ms: now,
            });
            // Undersized or oversized "packets" are dropped silently, like
            // any other malformed traffic.
            if let Some(packet) = crate::crypto::Packet::from_bytes(&inj.packet) {
                if !self.malicious.contains(&inj.to) {
                    next_mail[inj.to as usize].push(Envelope::Message(packet));
                }
            }
        }

        self.mailboxes = next_mail;
        self.tick += 1;
        Ok(outcome)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{keygen, Plaintext};
    use crate::node::{join, BroadcastMode, NodeConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn honest_node(seed: u64) -> NodeState {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut cfg = NodeConfig::new(keygen(&mut rng));
        cfg.send_rate_ms = 100;
        cfg.ds_share_interval_ms = 500;
        cfg.broadcast_mode = BroadcastMode::Smart;
        cfg.turn_override = Some(0);
        join(seed, cfg).unwrap()
    }

    #[test]
    fn no_malicious_means_no_payload_observations() {
        let mut net = ScriptedNet::new(vec![Some(honest_node(1)), Some(honest_node(2))], 100);
        let round = RoundInput {
            edges: vec![(0, 1)],
            ..Default::default()
        };
        for _ in 0..5 {
            net.step(&round).unwrap();
        }
        assert!(!net.observations().is_empty());
        assert!(net.observations().iter().all(|o| o.payload.is_none()));
    }

    #[test]
    fn malicious_neighbor_sees_exactly_adjacent_broadcasts() {
        // Node 2 is malicious, adjacent only to node 1.
        let mut net = ScriptedNet::new(
            vec![Some(honest_node(1)), Some(honest_node(2)), None],
            100,
        );
        let round = RoundInput {
            edges: vec![(0, 1), (1, 2)],
            ..Default::default()
        };
        for _ in 0..5 {
            net.step(&round).unwrap();
        }
        let with_payload: Vec<_> = net
            .observations()
            .iter()
            .filter(|o| o.payload.is_some())
            .collect();
        assert!(!with_payload.is_empty());
        assert!(with_payload.iter().all(|o| o.sender == 1 && o.receiver == 2));
    }

    #[test]
    fn injections_only_cross_existing_edges() {
        let mut net = ScriptedNet::new(vec![Some(honest_node(1)), None], 100);
        let dropped = RoundInput {
            edges: vec![],
            injections: vec![Injection {
                from: 1,
                to: 0,
                packet: vec![0u8; 255],
            }],
            ..Default::default()
        };
        net.step(&dropped).unwrap();
        assert!(net.events().iter().all(|e| e.sender_id != 1));

        let linked = RoundInput {
            edges: vec![(0, 1)],
            injections: vec![Injection {
                from: 1,
                to: 0,
                packet: vec![0u8; 255],
            }],
            ..Default::default()
        };
        net.step(&linked).unwrap();
        assert!(net.events().iter().any(|e| e.sender_id == 1 && e.receiver_id == 0));
    }

    #[test]
    fn disconnected_recipient_never_accepts() {
        // 0 and 1 are friends; the script never links them. Cross-check with
        // the reachability oracle over the same snapshots.
        let mut a = honest_node(1);
        let mut b = honest_node(2);
        let b_pk = b.public_key();
        a.add_friend(b_pk, false);
        b.add_friend(a.public_key(), false);
        let mut net = ScriptedNet::new(vec![Some(a), Some(b), Some(honest_node(3))], 100);
        net.node_mut(0)
            .unwrap()
            .queue_send(Recipient::Friend(b_pk), b"hello")
            .unwrap();
        let round = RoundInput {
            edges: vec![(0, 2)], // 1 is isolated
            ..Default::default()
        };
        let mut accepted_at_1 = 0;
        let mut snaps = Vec::new();
        for r in 0..10 {
            snaps.push(TopologySnapshot::from_edges(r, 3, &round.edges));
            let outcome = net.step(&round).unwrap();
            accepted_at_1 += outcome.accepted.iter().filter(|(n, _)| *n == 1).count();
        }
        assert!(!crate::simnet::good_path_exists(&snaps, 0, 1).unwrap());
        assert_eq!(accepted_at_1, 0);
    }

    #[test]
    fn connected_recipient_accepts_scripted_send() {
        let mut a = honest_node(1);
        let mut b = honest_node(2);
        let b_pk = b.public_key();
        let a_pk = a.public_key();
        a.add_friend(b_pk, false);
        b.add_friend(a_pk, false);
        let mut net = ScriptedNet::new(vec![Some(a), Some(b)], 100);
        let round = RoundInput {
            edges: vec![(0, 1)],
            honest_sends: vec![(
                0,
                Recipient::Friend(b_pk),
                Plaintext::pad(&[0, b'h', b'i']).unwrap(),
            )],
            ..Default::default()
        };
        let mut got = false;
        for _ in 0..5 {
            let outcome = net.step(&round.clone_without_sends_after_first(got)).unwrap();
            got |= outcome
                .accepted
                .iter()
                .any(|(n, acc)| *n == 1 && acc.sender == a_pk);
        }
        assert!(got);
    }

    impl RoundInput {
        fn clone_without_sends_after_first(&self, already_sent: bool) -> RoundInput {
            let mut c = self.clone();
            if already_sent {
                c.honest_sends.clear();
            }
            c
        }
    }
}
