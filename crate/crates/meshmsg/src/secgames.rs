//! Executable security games.
//!
//! Three experiments run against the real protocol stack:
//!
//! * **Integrity** ([`run_mint`]): a challenger runs honest nodes over
//!   adversary-chosen topologies while the adversary observes, injects, and
//!   mutates packets. The challenger ledgers every honest send into `S` and
//!   every accepted honest-sender decryption into `R`; the verdict is 1
//!   exactly when `R ⊄ S`, i.e. a forgery was accepted. A deliberately
//!   broken decryption backend must flip the verdict — that control is part
//!   of the suite, so the game is known to be able to fail.
//! * **Confidentiality / metadata invariance** ([`run_mconf_trace_pair`]):
//!   the same script is executed in two worlds that differ only in which of
//!   two (recipient, message) choices each query uses. All other randomness
//!   is shared. For honest-only scripts the coalition's observation traces
//!   must be identical under the (tick, sender, receiver, kind, size)
//!   projection; the ciphertext bytes are where the worlds may differ.
//! * **Key privacy** ([`run_key_privacy`]): a challenger encrypts batches
//!   under one of two public keys; a distinguisher suite (byte-position
//!   histograms, length check, prefix correlation, and a blind control)
//!   estimates its advantage over repeated trials.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::crypto::{self, Backend, Packet, Plaintext, PublicKey, PLAINTEXT_LEN};
use crate::node::{self, BroadcastMode, Envelope, NodeConfig, NodeState, Recipient, SentKind};
use crate::simnet::scripted::{Injection, Observation, RoundInput, ScriptedNet};
use crate::simnet::{node_seed, TICK_MS};

/// Injections accepted per malicious user per round. The experiment itself
/// puts no cap on these; this budget only bounds harness runtime.
pub const MAX_INJECTIONS_PER_USER_ROUND: usize = 64;

/// Game-sized digest table: large enough that divergent-world hash collisions
/// (which would legitimately perturb request sizes) stay negligible at game
/// scale.
pub const GAME_TABLE_SIZE: usize = 65_536;

#[derive(Debug, thiserror::Error)]
pub enum GameError {
    #[error("bad game parameters: {0}")]
    BadParams(&'static str),
    #[error("bad script: {0}")]
    BadScript(&'static str),
    #[error(transparent)]
    Sim(#[from] crate::simnet::SimError),
}

/// Parameters shared by the game experiments. The security level is fixed by
/// the packet instantiation (P-256 / AES-256), so unlike the key and table
/// sizes it is not tunable here.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GameParams {
    pub n: u32,
    pub t_rounds: u64,
    pub malicious: BTreeSet<u32>,
    pub seed: u64,
}

impl GameParams {
    pub fn new(n: u32, t_rounds: u64, malicious: impl IntoIterator<Item = u32>, seed: u64) -> Self {
        Self {
            n,
            t_rounds,
            malicious: malicious.into_iter().collect(),
            seed,
        }
    }

    pub fn honest_count(&self) -> u32 {
        self.n - self.malicious.len() as u32
    }

    pub fn validate(&self) -> Result<(), GameError> {
        if self.n == 0 || self.t_rounds == 0 {
            return Err(GameError::BadParams("need at least one user and one round"));
        }
        if self.malicious.iter().any(|&m| m >= self.n) {
            return Err(GameError::BadParams("malicious id out of range"));
        }
        if self.malicious.len() as u32 >= self.n {
            return Err(GameError::BadParams("need at least one honest user"));
        }
        Ok(())
    }

    pub fn is_honest(&self, user: u32) -> bool {
        user < self.n && !self.malicious.contains(&user)
    }
}

/// Protocol cadence for game nodes, in ticks (one round = one tick).
#[derive(Clone, Copy, Debug)]
pub struct GameNodeOpts {
    pub send_every_rounds: u64,
    pub ds_share_every_rounds: u64,
    pub broadcast_mode: BroadcastMode,
}

impl Default for GameNodeOpts {
    fn default() -> Self {
        Self {
            send_every_rounds: 1,
            ds_share_every_rounds: 5,
            broadcast_mode: BroadcastMode::Smart,
        }
    }
}

/// Builds the challenger-side honest nodes: every honest user runs the real
/// state machine, knows every user's public key, and shares turn 0 so paired
/// worlds stay aligned.
fn build_honest_nodes(
    params: &GameParams,
    backend: Backend,
    malicious_pks: &BTreeMap<u32, PublicKey>,
    opts: GameNodeOpts,
) -> Result<(Vec<Option<NodeState>>, BTreeMap<u32, PublicKey>), GameError> {
    let mut nodes: Vec<Option<NodeState>> = Vec::with_capacity(params.n as usize);
    let mut user_pks: BTreeMap<u32, PublicKey> = malicious_pks.clone();
    for i in 0..params.n {
        if params.malicious.contains(&i) {
            if !malicious_pks.contains_key(&i) {
                return Err(GameError::BadParams("missing malicious public key"));
            }
            nodes.push(None);
            continue;
        }
        let seed = node_seed(params.seed, i);
        let keys = crypto::keygen(&mut rng_for(seed, "game-keys"));
        user_pks.insert(i, keys.public());
        let mut cfg = NodeConfig::new(keys);
        cfg.send_rate_ms = opts.send_every_rounds.max(1) * TICK_MS;
        cfg.ds_share_interval_ms = opts.ds_share_every_rounds.max(1) * TICK_MS;
        cfg.broadcast_mode = opts.broadcast_mode;
        cfg.table_size = GAME_TABLE_SIZE;
        cfg.turn_override = Some(0);
        cfg.backend = backend;
        let st = node::join(seed, cfg).map_err(|_| GameError::BadParams("node config"))?;
        nodes.push(Some(st));
    }
    for (i, slot) in nodes.iter_mut().enumerate() {
        if let Some(st) = slot {
            for (&j, pk) in &user_pks {
                if j != i as u32 {
                    st.add_friend(*pk, false);
                }
            }
        }
    }
    Ok((nodes, user_pks))
}

fn rng_for(seed: u64, label: &str) -> ChaCha12Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    ChaCha12Rng::from_seed(h.finalize().into())
}

// ---------------------------------------------------------------------------
// Integrity experiment
// ---------------------------------------------------------------------------

/// What the adversary does in one round.
#[derive(Clone, Debug, Default)]
pub struct MintRoundAction {
    pub edges: Vec<(u32, u32)>,
    /// (sender user, recipient user, message); senders must be honest.
    pub queries: Vec<(u32, u32, Plaintext)>,
    pub injections: Vec<Injection>,
}

/// A mesh-integrity adversary: registers keys for its seats, then reacts to
/// its accumulated observations round by round.
pub trait MintAdversary {
    fn register_keys(&mut self, params: &GameParams) -> BTreeMap<u32, PublicKey>;
    fn round(
        &mut self,
        round: u64,
        user_pks: &BTreeMap<u32, PublicKey>,
        new_observations: &[Observation],
    ) -> MintRoundAction;
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MintOutcome {
    /// 0: every accepted message was honestly sent. 1: a forgery landed.
    pub verdict: u8,
    /// The adversary violated the query rules; experiment ends with 0.
    pub aborted: bool,
    pub rounds_run: u64,
    pub accepted_forgeries: usize,
}

type SrTuple = ([u8; 33], [u8; 33], Vec<u8>, Vec<u8>);

/// Runs the integrity experiment for `params.t_rounds` rounds.
pub fn run_mint(
    params: &GameParams,
    adversary: &mut dyn MintAdversary,
    backend: Backend,
) -> Result<MintOutcome, GameError> {
    params.validate()?;
    let malicious_pks = adversary.register_keys(params);
    let (nodes, user_pks) = build_honest_nodes(params, backend, &malicious_pks)?;
    let honest_pk_set: BTreeSet<PublicKey> = user_pks
        .iter()
        .filter(|(i, _)| params.is_honest(**i))
        .map(|(_, pk)| *pk)
        .collect();
    let node_pk = |net: &ScriptedNet, id: u32| net.node(id).map(|n| n.public_key());

    let mut net = ScriptedNet::new(nodes, TICK_MS);
    let mut sent_set: BTreeSet<SrTuple> = BTreeSet::new();
    let mut accepted_set: BTreeSet<SrTuple> = BTreeSet::new();
    let mut obs_cursor = 0usize;

    for round in 0..params.t_rounds {
        let new_obs = &net.observations()[obs_cursor..];
        let action = adversary.round(round, &user_pks, new_obs);
        obs_cursor = net.observations().len();

        for &(sender, _, _) in &action.queries {
            if !params.is_honest(sender) {
                return Ok(MintOutcome {
                    verdict: 0,
                    aborted: true,
                    rounds_run: round,
                    accepted_forgeries: 0,
                });
            }
        }
        let mut per_user: BTreeMap<u32, usize> = BTreeMap::new();
        for inj in &action.injections {
            let c = per_user.entry(inj.from).or_default();
            *c += 1;
            if *c > MAX_INJECTIONS_PER_USER_ROUND {
                return Err(GameError::BadScript("injection budget exceeded"));
            }
        }

        let honest_sends = action
            .queries
            .iter()
            .map(|(s, r, m)| {
                let pk = user_pks
                    .get(r)
                    .copied()
                    .ok_or(GameError::BadScript("query references unknown user"))?;
                Ok((*s, Recipient::Friend(pk), m.clone()))
            })
            .collect::<Result<Vec<_>, GameError>>()?;
        let input = RoundInput {
            edges: action.edges,
            honest_sends,
            injections: action.injections,
        };
        let outcome = net.step(&input)?;

        for (node_id, sent) in outcome.sent {
            if let SentKind::Real {
                recipient: Recipient::Friend(rec_pk),
            } = sent.kind
            {
                let sender_pk = node_pk(&net, node_id).expect("sender is honest");
                sent_set.insert((
                    sender_pk.to_bytes(),
                    rec_pk.to_bytes(),
                    sent.plaintext.as_bytes().to_vec(),
                    sent.packet.as_bytes().to_vec(),
                ));
            }
        }
        for (node_id, acc) in outcome.accepted {
            if honest_pk_set.contains(&acc.sender) {
                let rec_pk = node_pk(&net, node_id).expect("acceptor is honest");
                accepted_set.insert((
                    acc.sender.to_bytes(),
                    rec_pk.to_bytes(),
                    acc.plaintext.as_bytes().to_vec(),
                    acc.packet.as_bytes().to_vec(),
                ));
            }
        }
    }

    let forgeries = accepted_set.difference(&sent_set).count();
    Ok(MintOutcome {
        verdict: u8::from(forgeries > 0),
        aborted: false,
        rounds_run: params.t_rounds,
        accepted_forgeries: forgeries,
    })
}

// ---------------------------------------------------------------------------
// Shipped adversaries
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdversaryKind {
    /// Observes, never injects.
    Passive,
    /// Same wire behavior as passive: rogue seats simply absorb whatever
    /// crosses them (they never relay in the first place).
    DropAll,
    /// Re-injects every observed packet unmodified.
    Replay,
    /// Re-injects every observed packet with one random bit flipped.
    BitFlip,
    /// Re-injects observed packets one round late.
    DelayOneRound,
}

impl std::str::FromStr for AdversaryKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "passive" => Ok(Self::Passive),
            "drop" | "drop-all" => Ok(Self::DropAll),
            "replay" => Ok(Self::Replay),
            "bitflip" | "bit-flip" => Ok(Self::BitFlip),
            "delay" | "delay-one-round" => Ok(Self::DelayOneRound),
            other => Err(format!("unknown adversary {other:?}")),
        }
    }
}

/// The stock adversary family: a static ring-plus-chords topology of its own
/// choosing, a trickle of honest queries to keep `S` populated, and an
/// injection strategy per [`AdversaryKind`].
pub struct ShippedAdversary {
    kind: AdversaryKind,
    rng: ChaCha12Rng,
    params: Option<GameParams>,
    edges: Vec<(u32, u32)>,
    adjacency: BTreeMap<u32, Vec<u32>>,
    delayed: Vec<(u32, Vec<u8>)>,
    honest: Vec<u32>,
}

impl ShippedAdversary {
    pub fn new(kind: AdversaryKind, seed: u64) -> Self {
        Self {
            kind,
            rng: rng_for(seed, "adversary"),
            params: None,
            edges: Vec::new(),
            adjacency: BTreeMap::new(),
            delayed: Vec::new(),
            honest: Vec::new(),
        }
    }

    /// Ring over all users plus a few chords; connected, and every malicious
    /// seat borders honest ones.
    fn pick_topology(&mut self, n: u32) {
        let mut edges: BTreeSet<(u32, u32)> = (0..n)
            .map(|i| {
                let j = (i + 1) % n;
                (i.min(j), i.max(j))
            })
            .collect();
        for _ in 0..n / 3 {
            let a = self.rng.gen_range(0..n);
            let b = self.rng.gen_range(0..n);
            if a != b {
                edges.insert((a.min(b), a.max(b)));
            }
        }
        self.edges = edges.into_iter().collect();
        let mut adjacency: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for &(a, b) in &self.edges {
            adjacency.entry(a).or_default().push(b);
            adjacency.entry(b).or_default().push(a);
        }
        self.adjacency = adjacency;
    }

    fn observed_packets(&self, obs: &[Observation]) -> Vec<(u32, Vec<u8>)> {
        let mut out = Vec::new();
        for o in obs {
            let Some(payload) = &o.payload else { continue };
            match Envelope::decode(payload) {
                Some(Envelope::Message(p)) => out.push((o.receiver, p.as_bytes().to_vec())),
                Some(Envelope::Response(ps)) => {
                    out.extend(ps.iter().map(|p| (o.receiver, p.as_bytes().to_vec())))
                }
                _ => {}
            }
        }
        out
    }

    fn inject_from(&mut self, packets: Vec<(u32, Vec<u8>)>, mutate: bool) -> Vec<Injection> {
        let mut injections = Vec::new();
        let mut budget: BTreeMap<u32, usize> = BTreeMap::new();
        for (seat, mut packet) in packets {
            if mutate {
                let bit = self.rng.gen_range(0..packet.len() * 8);
                packet[bit / 8] ^= 0x80 >> (bit % 8);
            }
            let neighbors: Vec<u32> = self
                .adjacency
                .get(&seat)
                .map(|nbs| nbs.iter().copied().filter(|nb| self.honest.contains(nb)).collect())
                .unwrap_or_default();
            for to in neighbors {
                let used = budget.entry(seat).or_default();
                if *used >= MAX_INJECTIONS_PER_USER_ROUND {
                    break;
                }
                *used += 1;
                injections.push(Injection {
                    from: seat,
                    to,
                    packet: packet.clone(),
                });
            }
        }
        injections
    }
}

impl MintAdversary for ShippedAdversary {
    fn register_keys(&mut self, params: &GameParams) -> BTreeMap<u32, PublicKey> {
        self.params = Some(params.clone());
        self.honest = (0..params.n).filter(|&i| params.is_honest(i)).collect();
        self.pick_topology(params.n);
        params
            .malicious
            .iter()
            .map(|&i| (i, crypto::keygen(&mut self.rng).public()))
            .collect()
    }

    fn round(
        &mut self,
        _round: u64,
        _user_pks: &BTreeMap<u32, PublicKey>,
        new_observations: &[Observation],
    ) -> MintRoundAction {
        let mut action = MintRoundAction {
            edges: self.edges.clone(),
            ..Default::default()
        };
        // Keep honest traffic flowing: one real query per round.
        if self.honest.len() >= 2 {
            let s = self.honest[self.rng.gen_range(0..self.honest.len())];
            let mut r = s;
            while r == s {
                r = self.honest[self.rng.gen_range(0..self.honest.len())];
            }
            let mut m = [0u8; PLAINTEXT_LEN];
            self.rng.fill_bytes(&mut m);
            action.queries.push((s, r, Plaintext::from_bytes(m)));
        }

        let observed = self.observed_packets(new_observations);
        action.injections = match self.kind {
            AdversaryKind::Passive | AdversaryKind::DropAll => Vec::new(),
            AdversaryKind::Replay => self.inject_from(observed, false),
            AdversaryKind::BitFlip => self.inject_from(observed, true),
            AdversaryKind::DelayOneRound => {
                let held = std::mem::replace(&mut self.delayed, observed);
                self.inject_from(held, false)
            }
        };
        action
    }
}

// ---------------------------------------------------------------------------
// Confidentiality experiment
// ---------------------------------------------------------------------------

/// A serializable paired-world script. Users are indices 0..n; `queries`
/// carry both worlds' choices.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MconfScript {
    pub n: u32,
    pub seed: u64,
    pub malicious: Vec<u32>,
    pub rounds: Vec<MconfRound>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct MconfRound {
    pub edges: Vec<(u32, u32)>,
    #[serde(default)]
    pub queries: Vec<MconfQuery>,
    #[serde(default)]
    pub injections: Vec<MconfInjection>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MconfQuery {
    pub sender: u32,
    pub rec0: u32,
    /// Hex of the fixed-length plaintext for world 0.
    pub m0: String,
    pub rec1: u32,
    pub m1: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MconfInjection {
    pub from: u32,
    pub to: u32,
    pub packet_hex: String,
}

#[derive(Debug)]
pub struct MconfOutcome {
    /// A query violated the malicious-recipient restriction; both worlds
    /// stop before round 0 and the experiment outputs 0.
    pub aborted: bool,
    pub trace0: Vec<Observation>,
    pub trace1: Vec<Observation>,
}

impl MconfOutcome {
    /// Metadata projections are what must match between worlds.
    pub fn projections_equal(&self) -> bool {
        self.trace0.len() == self.trace1.len()
            && self
                .trace0
                .iter()
                .zip(&self.trace1)
                .all(|(a, b)| a.project() == b.project())
    }
}

fn decode_plaintext(hexstr: &str) -> Result<Plaintext, GameError> {
    let bytes = hex::decode(hexstr).map_err(|_| GameError::BadScript("plaintext is not hex"))?;
    let arr: [u8; PLAINTEXT_LEN] = bytes
        .try_into()
        .map_err(|_| GameError::BadScript("plaintext must be exactly the fixed length"))?;
    Ok(Plaintext::from_bytes(arr))
}

/// Runs both worlds of the confidentiality experiment with shared randomness
/// and returns the two observation traces.
pub fn run_mconf_trace_pair(script: &MconfScript) -> Result<MconfOutcome, GameError> {
    let params = GameParams::new(
        script.n,
        script.rounds.len().max(1) as u64,
        script.malicious.iter().copied(),
        script.seed,
    );
    params.validate()?;

    // Restriction: queries touching a malicious recipient must be identical
    // in both worlds. Violations abort the experiment (output 0).
    for round in &script.rounds {
        for q in &round.queries {
            if q.sender >= script.n || q.rec0 >= script.n || q.rec1 >= script.n {
                return Err(GameError::BadScript("query references unknown user"));
            }
            if !params.is_honest(q.sender) {
                return Err(GameError::BadScript("query sender must be honest"));
            }
            let touches_malicious = !params.is_honest(q.rec0) || !params.is_honest(q.rec1);
            if touches_malicious && (q.rec0 != q.rec1 || q.m0 != q.m1) {
                return Ok(MconfOutcome {
                    aborted: true,
                    trace0: Vec::new(),
                    trace1: Vec::new(),
                });
            }
        }
        if round.injections.len() > MAX_INJECTIONS_PER_USER_ROUND * script.malicious.len().max(1) {
            return Err(GameError::BadScript("injection budget exceeded"));
        }
    }

    // Malicious seats still need keys so restricted queries can encrypt to
    // them; the harness draws them on the adversary's behalf.
    let malicious_pks: BTreeMap<u32, PublicKey> = script
        .malicious
        .iter()
        .map(|&i| {
            let mut rng = rng_for(node_seed(script.seed, i), "mconf-malicious-key");
            (i, crypto::keygen(&mut rng).public())
        })
        .collect();

    let mut traces: Vec<Vec<Observation>> = Vec::with_capacity(2);
    for world in 0..2u8 {
        let (nodes, user_pks) = build_honest_nodes(&params, Backend::Checked, &malicious_pks)?;
        let mut net = ScriptedNet::new(nodes, TICK_MS);
        for round in &script.rounds {
            let mut honest_sends = Vec::with_capacity(round.queries.len());
            for q in &round.queries {
                let (rec, m) = if world == 0 {
                    (q.rec0, decode_plaintext(&q.m0)?)
                } else {
                    (q.rec1, decode_plaintext(&q.m1)?)
                };
                honest_sends.push((q.sender, Recipient::Friend(user_pks[&rec]), m));
            }
            let injections = round
                .injections
                .iter()
                .map(|inj| {
                    Ok(Injection {
                        from: inj.from,
                        to: inj.to,
                        packet: hex::decode(&inj.packet_hex)
                            .map_err(|_| GameError::BadScript("injection is not hex"))?,
                    })
                })
                .collect::<Result<Vec<_>, GameError>>()?;
            net.step(&RoundInput {
                edges: round.edges.clone(),
                honest_sends,
                injections,
            })?;
        }
        traces.push(net.into_observations());
    }
    let trace1 = traces.pop().unwrap();
    let trace0 = traces.pop().unwrap();
    Ok(MconfOutcome {
        aborted: false,
        trace0,
        trace1,
    })
}

/// Generates a randomized honest-only paired script: honest senders, honest
/// recipients in both worlds (so the restriction never bites), random
/// per-round connected-ish topologies, and at least one malicious observer.
pub fn random_honest_script(seed: u64, max_n: u32, max_t: u64) -> MconfScript {
    let mut rng = rng_for(seed, "mconf-script");
    let n = rng.gen_range(4..=max_n.max(4));
    let t = rng.gen_range(5..=max_t.max(5));
    let malicious_count = rng.gen_range(1..=2.min(n - 3));
    let mut malicious = BTreeSet::new();
    while malicious.len() < malicious_count as usize {
        malicious.insert(rng.gen_range(0..n));
    }
    let honest: Vec<u32> = (0..n).filter(|i| !malicious.contains(i)).collect();

    let mut rounds = Vec::with_capacity(t as usize);
    for _ in 0..t {
        // Ring plus random chords, rebuilt per round.
        let mut edges: BTreeSet<(u32, u32)> = (0..n)
            .map(|i| {
                let j = (i + 1) % n;
                (i.min(j), i.max(j))
            })
            .collect();
        for _ in 0..rng.gen_range(0..n) {
            let a = rng.gen_range(0..n);
            let b = rng.gen_range(0..n);
            if a != b {
                edges.insert((a.min(b), a.max(b)));
            }
        }
        let mut queries = Vec::new();
        for _ in 0..rng.gen_range(0..=2) {
            let sender = honest[rng.gen_range(0..honest.len())];
            let pick = |rng: &mut ChaCha12Rng| loop {
                let r = honest[rng.gen_range(0..honest.len())];
                if r != sender {
                    return r;
                }
            };
            let rec0 = pick(&mut rng);
            let rec1 = pick(&mut rng);
            let mut m0 = [0u8; PLAINTEXT_LEN];
            let mut m1 = [0u8; PLAINTEXT_LEN];
            rng.fill_bytes(&mut m0);
            rng.fill_bytes(&mut m1);
            queries.push(MconfQuery {
                sender,
                rec0,
                m0: hex::encode(m0),
                rec1,
                m1: hex::encode(m1),
            });
        }
        rounds.push(MconfRound {
            edges: edges.into_iter().collect(),
            queries,
            injections: Vec::new(),
        });
    }
    MconfScript {
        n,
        seed: seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1),
        malicious: malicious.into_iter().collect(),
        rounds,
    }
}

// ---------------------------------------------------------------------------
// Key-privacy game
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct KeyPrivacyConfig {
    pub trials: u32,
    pub queries_per_trial: u32,
    /// Reference ciphertexts the distinguishers may self-generate per key.
    pub reference_size: u32,
    pub seed: u64,
}

impl Default for KeyPrivacyConfig {
    fn default() -> Self {
        Self {
            trials: 400,
            queries_per_trial: 25,
            reference_size: 2_000,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DistinguisherReport {
    pub name: &'static str,
    /// P̂[guess=1 | b=1] and P̂[guess=1 | b=0].
    pub p_guess1_given_b1: f64,
    pub p_guess1_given_b0: f64,
    pub advantage: f64,
    /// One-sigma sampling noise of the advantage estimate under the null.
    pub sigma: f64,
}

#[derive(Clone, Debug)]
pub struct KeyPrivacyReport {
    pub trials: u32,
    pub queries_per_trial: u32,
    pub per_distinguisher: Vec<DistinguisherReport>,
    pub max_advantage: f64,
    pub max_sigma: f64,
}

struct RefHistograms {
    h0: Vec<[u64; 256]>,
    h1: Vec<[u64; 256]>,
    n: u64,
}

fn corpus_distance(challenge: &[Packet], reference: &[[u64; 256]], ref_n: u64, positions: std::ops::Range<usize>) -> f64 {
    let hist = crate::stats::byte_position_histograms(
        &challenge.iter().map(|p| p.as_bytes().as_slice()).collect::<Vec<_>>(),
    );
    let q = challenge.len() as f64;
    let mut dist = 0.0;
    for pos in positions {
        for byte in 0..256 {
            let fc = hist[pos][byte] as f64 / q;
            let fr = reference[pos][byte] as f64 / ref_n as f64;
            let d = fc - fr;
            dist += d * d;
        }
    }
    dist
}

fn guess_by_distance(challenge: &[Packet], refs: &RefHistograms, positions: std::ops::Range<usize>) -> u8 {
    let d0 = corpus_distance(challenge, &refs.h0, refs.n, positions.clone());
    let d1 = corpus_distance(challenge, &refs.h1, refs.n, positions);
    u8::from(d1 < d0)
}

/// Repeated key-privacy trials against the distinguisher suite. Each trial
/// draws a hidden bit, encrypts a batch of random fixed-length messages under
/// that key, and lets every distinguisher guess. Advantages are reported with
/// their binomial noise floor; a scheme leak shows up as an advantage many
/// sigmas above it.
pub fn run_key_privacy(pk0: &PublicKey, pk1: &PublicKey, cfg: &KeyPrivacyConfig) -> KeyPrivacyReport {
    let mut rng = rng_for(cfg.seed, "keypriv");
    let sender = crypto::keygen(&mut rng);

    let reference: RefHistograms = {
        let mut c0 = Vec::with_capacity(cfg.reference_size as usize);
        let mut c1 = Vec::with_capacity(cfg.reference_size as usize);
        for _ in 0..cfg.reference_size {
            let m = Plaintext::random(&mut rng);
            c0.push(crypto::signcrypt(&sender, pk0, &m, &mut rng));
            let m = Plaintext::random(&mut rng);
            c1.push(crypto::signcrypt(&sender, pk1, &m, &mut rng));
        }
        RefHistograms {
            h0: crate::stats::byte_position_histograms(
                &c0.iter().map(|p| p.as_bytes().as_slice()).collect::<Vec<_>>(),
            ),
            h1: crate::stats::byte_position_histograms(
                &c1.iter().map(|p| p.as_bytes().as_slice()).collect::<Vec<_>>(),
            ),
            n: cfg.reference_size as u64,
        }
    };

    // guessed-1 counts per (distinguisher, actual b).
    const NAMES: [&str; 4] = ["byte-histogram", "prefix-correlation", "length-check", "blind"];
    let mut guessed1 = [[0u64; 2]; 4];
    let mut b_counts = [0u64; 2];
    let mut blind_rng = rng_for(cfg.seed, "keypriv-blind");

    for _ in 0..cfg.trials {
        let b = rng.gen_range(0..2u8);
        b_counts[b as usize] += 1;
        let pk = if b == 0 { pk0 } else { pk1 };
        let challenge: Vec<Packet> = (0..cfg.queries_per_trial)
            .map(|_| {
                let m = Plaintext::random(&mut rng);
                crypto::signcrypt(&sender, pk, &m, &mut rng)
            })
            .collect();

        let guesses = [
            guess_by_distance(&challenge, &reference, 0..crypto::PACKET_SIZE),
            guess_by_distance(&challenge, &reference, 0..crypto::KEM_CT_LEN),
            // Length check: every packet is the fixed size by construction,
            // so this distinguisher never finds a signal to act on.
            u8::from(challenge.iter().any(|p| p.as_bytes().len() != crypto::PACKET_SIZE)),
            blind_rng.gen_range(0..2u8),
        ];
        for (d, &g) in guesses.iter().enumerate() {
            guessed1[d][b as usize] += g as u64;
        }
    }

    let per_distinguisher: Vec<DistinguisherReport> = NAMES
        .iter()
        .enumerate()
        .map(|(d, name)| {
            let p1 = guessed1[d][1] as f64 / b_counts[1].max(1) as f64;
            let p0 = guessed1[d][0] as f64 / b_counts[0].max(1) as f64;
            let sigma =
                (0.25 / b_counts[0].max(1) as f64 + 0.25 / b_counts[1].max(1) as f64).sqrt();
            DistinguisherReport {
                name,
                p_guess1_given_b1: p1,
                p_guess1_given_b0: p0,
                advantage: (p1 - p0).abs(),
                sigma,
            }
        })
        .collect();

    let max_advantage = per_distinguisher
        .iter()
        .map(|d| d.advantage)
        .fold(0.0, f64::max);
    let max_sigma = per_distinguisher.iter().map(|d| d.sigma).fold(0.0, f64::max);
    KeyPrivacyReport {
        trials: cfg.trials,
        queries_per_trial: cfg.queries_per_trial,
        per_distinguisher,
        max_advantage,
        max_sigma,
    }
}
