//! The per-device messaging-phase state machine.
//!
//! One [`tick`](NodeState::tick) runs the control loop once, in this fixed
//! order: scheduled send (real message or dummy — outwardly identical),
//! digest share, diff-and-request, respond, receive, expire. The device sends
//! exactly one MESSAGE packet every `send_rate` ms starting at its uniformly
//! random `turn`, whether or not anyone queued anything: cover traffic is
//! what hides usage, so the outbound trace must not depend on the queue.
//!
//! The broadcast strategy is a config switch. `Simple` floods: every
//! never-seen packet is retransmitted once. `Smart` runs anti-entropy over
//! the digest: share [`CompactDigest`], request missing indices, respond with
//! stored packets.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use sha2::{Digest as _, Sha256};

use crate::crypto::{
    self, designcrypt_with, group_designcrypt, Backend, GroupKey, KeyPair, Packet, Plaintext,
    PublicKey, GROUP_ID_LEN, GROUP_KEY_LEN, MAX_CONTENT_LEN, PACKET_SIZE,
};
use crate::digest::{diff, CompactDigest, Digest, MessageId, DEFAULT_TABLE_SIZE};

/// Window from which a device's `turn` is drawn, one slot per protocol tick.
pub const TURN_WINDOW_MS: u64 = 60_000;
/// Granularity of turn slots; matches the 100 ms protocol tick.
pub const TURN_SLOT_MS: u64 = 100;
/// Headline message period.
pub const DEFAULT_SEND_RATE_MS: u64 = 30_000;
/// Headline digest-share period for smart broadcasting.
pub const DEFAULT_DS_SHARE_INTERVAL_MS: u64 = 5_000;
/// How long received messages are remembered; must exceed worst-case
/// delivery time or expired messages loop back as "new".
pub const DEFAULT_TIME_TO_KEEP_MS: u64 = 300_000;
/// Default web-of-trust depth for accepting introductions.
pub const DEFAULT_WOT_HOP_LIMIT: u8 = 2;
/// Delegated group invites per setup message (8-byte key fingerprints).
pub const MAX_DELEGATES_PER_INVITE: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BroadcastMode {
    Simple,
    Smart,
}

/// Per-device protocol parameters. `turn` is not here: it is drawn at
/// [`join`] so that no two devices share a schedule.
#[derive(Clone, Debug)]
pub struct NodeConfig {
    pub keys: KeyPair,
    pub send_rate_ms: u64,
    pub ds_share_interval_ms: u64,
    pub time_to_keep_ms: u64,
    pub broadcast_mode: BroadcastMode,
    pub table_size: usize,
    pub wot_hop_limit: u8,
    /// Fixed turn instead of a drawn one. The security-game challenger pins
    /// this so paired worlds share schedules; everyone else leaves it `None`.
    pub turn_override: Option<u64>,
    /// Decryption backend; anything but `Checked` exists only so the
    /// integrity game can prove it detects a broken scheme.
    pub backend: Backend,
}

impl NodeConfig {
    pub fn new(keys: KeyPair) -> Self {
        Self {
            keys,
            send_rate_ms: DEFAULT_SEND_RATE_MS,
            ds_share_interval_ms: DEFAULT_DS_SHARE_INTERVAL_MS,
            time_to_keep_ms: DEFAULT_TIME_TO_KEEP_MS,
            broadcast_mode: BroadcastMode::Smart,
            table_size: DEFAULT_TABLE_SIZE,
            wot_hop_limit: DEFAULT_WOT_HOP_LIMIT,
            turn_override: None,
            backend: Backend::Checked,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum NodeError {
    #[error("recipient key is not in the friends list")]
    NotAFriend,
    #[error("unknown group id")]
    UnknownGroup,
    #[error("content too long: {got} bytes, limit {limit}")]
    ContentTooLong { got: usize, limit: usize },
    #[error("introducer does not know both parties")]
    IntroducerMissingParty,
    #[error("too many delegated invites: {0}, limit {limit}", limit = MAX_DELEGATES_PER_INVITE)]
    TooManyDelegates(usize),
    #[error("bad config: {0}")]
    BadConfig(&'static str),
}

/// Where a queued message is headed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Recipient {
    Friend(PublicKey),
    Group([u8; GROUP_ID_LEN]),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FriendEntry {
    pub may_introduce: bool,
    /// 0 for keys exchanged in person, +1 per introduction hop.
    pub wot_depth: u8,
}

/// Application-level framing inside the fixed plaintext: 1-byte tag, then a
/// tag-specific body. Everything still pads to the same wire size.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AppPayload {
    Text(Vec<u8>),
    /// A trusted mutual contact forwarding someone's public key.
    Intro { introduced: PublicKey },
    /// Group formation: key material plus fingerprints of friends the
    /// receiver is asked to invite in turn.
    GroupSetup {
        key: GroupKey,
        delegates: Vec<[u8; 8]>,
    },
}

const TAG_TEXT: u8 = 0;
const TAG_INTRO: u8 = 1;
const TAG_GROUP_SETUP: u8 = 2;

impl AppPayload {
    pub fn encode(&self) -> Result<Vec<u8>, NodeError> {
        let mut out = Vec::new();
        match self {
            AppPayload::Text(body) => {
                if body.len() > MAX_CONTENT_LEN - 1 {
                    return Err(NodeError::ContentTooLong {
                        got: body.len(),
                        limit: MAX_CONTENT_LEN - 1,
                    });
                }
                out.push(TAG_TEXT);
                out.extend_from_slice(body);
            }
            AppPayload::Intro { introduced } => {
                out.push(TAG_INTRO);
                out.extend_from_slice(introduced.as_bytes());
            }
            AppPayload::GroupSetup { key, delegates } => {
                if delegates.len() > MAX_DELEGATES_PER_INVITE {
                    return Err(NodeError::TooManyDelegates(delegates.len()));
                }
                out.push(TAG_GROUP_SETUP);
                out.extend_from_slice(&key.key);
                out.extend_from_slice(&key.group_id);
                out.push(delegates.len() as u8);
                for d in delegates {
                    out.extend_from_slice(d);
                }
            }
        }
        debug_assert!(out.len() <= MAX_CONTENT_LEN);
        Ok(out)
    }

    pub fn decode(content: &[u8]) -> Option<Self> {
        let (&tag, body) = content.split_first()?;
        match tag {
            TAG_TEXT => Some(AppPayload::Text(body.to_vec())),
            TAG_INTRO => Some(AppPayload::Intro {
                introduced: PublicKey::from_bytes(body)?,
            }),
            TAG_GROUP_SETUP => {
                if body.len() < GROUP_KEY_LEN + GROUP_ID_LEN + 1 {
                    return None;
                }
                let key: [u8; GROUP_KEY_LEN] = body[..GROUP_KEY_LEN].try_into().ok()?;
                let group_id: [u8; GROUP_ID_LEN] =
                    body[GROUP_KEY_LEN..GROUP_KEY_LEN + GROUP_ID_LEN].try_into().ok()?;
                let n = body[GROUP_KEY_LEN + GROUP_ID_LEN] as usize;
                let rest = &body[GROUP_KEY_LEN + GROUP_ID_LEN + 1..];
                if n > MAX_DELEGATES_PER_INVITE || rest.len() != n * 8 {
                    return None;
                }
                let delegates = rest.chunks_exact(8).map(|c| c.try_into().unwrap()).collect();
                Some(AppPayload::GroupSetup {
                    key: GroupKey { key, group_id },
                    delegates,
                })
            }
            _ => None,
        }
    }

    pub fn to_plaintext(&self) -> Result<Plaintext, NodeError> {
        Plaintext::pad(&self.encode()?).map_err(|e| match e {
            crypto::PlaintextError::TooLong { got } => NodeError::ContentTooLong {
                got,
                limit: MAX_CONTENT_LEN,
            },
        })
    }
}

/// 8-byte identifier for referring to a key without shipping all 33 bytes.
pub fn key_fingerprint(pk: &PublicKey) -> [u8; 8] {
    let digest = Sha256::digest(pk.as_bytes());
    digest[..8].try_into().unwrap()
}

/// What a node hands to the transport. The four wire kinds are the complete
/// vocabulary of the protocol.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Envelope {
    Message(Packet),
    Digest(CompactDigest),
    Request(Vec<u16>),
    Response(Vec<Packet>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub enum EnvelopeKind {
    Message = 0,
    Digest = 1,
    Request = 2,
    Response = 3,
}

impl std::fmt::Display for EnvelopeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EnvelopeKind::Message => "MESSAGE",
            EnvelopeKind::Digest => "DIGEST",
            EnvelopeKind::Request => "REQUEST",
            EnvelopeKind::Response => "RESPONSE",
        })
    }
}

impl std::str::FromStr for EnvelopeKind {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "MESSAGE" => Ok(EnvelopeKind::Message),
            "DIGEST" => Ok(EnvelopeKind::Digest),
            "REQUEST" => Ok(EnvelopeKind::Request),
            "RESPONSE" => Ok(EnvelopeKind::Response),
            _ => Err(()),
        }
    }
}

impl Envelope {
    pub fn kind(&self) -> EnvelopeKind {
        match self {
            Envelope::Message(_) => EnvelopeKind::Message,
            Envelope::Digest(_) => EnvelopeKind::Digest,
            Envelope::Request(_) => EnvelopeKind::Request,
            Envelope::Response(_) => EnvelopeKind::Response,
        }
    }

    /// Radio payload size used for bandwidth accounting: MESSAGE is one
    /// packet, DIGEST the compact wire form, REQUEST a counted u16 list,
    /// RESPONSE a counted packet list.
    pub fn wire_size(&self) -> usize {
        match self {
            Envelope::Message(_) => PACKET_SIZE,
            Envelope::Digest(d) => CompactDigest::wire_size(d.table_size()),
            Envelope::Request(indices) => 2 + 2 * indices.len(),
            Envelope::Response(packets) => 2 + PACKET_SIZE * packets.len(),
        }
    }

    /// Serialized form for fixtures and script files: 1-byte kind, then the
    /// wire payload.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = vec![self.kind() as u8];
        match self {
            Envelope::Message(p) => out.extend_from_slice(p.as_bytes()),
            Envelope::Digest(d) => out.extend_from_slice(&d.to_wire()),
            Envelope::Request(indices) => {
                out.extend_from_slice(&(indices.len() as u16).to_be_bytes());
                for i in indices {
                    out.extend_from_slice(&i.to_be_bytes());
                }
            }
            Envelope::Response(packets) => {
                out.extend_from_slice(&(packets.len() as u16).to_be_bytes());
                for p in packets {
                    out.extend_from_slice(p.as_bytes());
                }
            }
        }
        out
    }

    /// Strict decode; anything malformed is `None` and gets dropped, since
    /// adversarial traffic is expected.
    pub fn decode(bytes: &[u8]) -> Option<Self> {
        let (&kind, rest) = bytes.split_first()?;
        match kind {
            0 => Packet::from_bytes(rest).map(Envelope::Message),
            1 => CompactDigest::from_wire(rest).map(Envelope::Digest),
            2 => {
                if rest.len() < 2 {
                    return None;
                }
                let n = u16::from_be_bytes([rest[0], rest[1]]) as usize;
                let body = &rest[2..];
                if body.len() != n * 2 {
                    return None;
                }
                Some(Envelope::Request(
                    body.chunks_exact(2)
                        .map(|c| u16::from_be_bytes([c[0], c[1]]))
                        .collect(),
                ))
            }
            3 => {
                if rest.len() < 2 {
                    return None;
                }
                let n = u16::from_be_bytes([rest[0], rest[1]]) as usize;
                let body = &rest[2..];
                if body.len() != n * PACKET_SIZE {
                    return None;
                }
                Some(Envelope::Response(
                    body.chunks_exact(PACKET_SIZE)
                        .map(|c| Packet::from_bytes(c).unwrap())
                        .collect(),
                ))
            }
            _ => None,
        }
    }
}

/// Which key opened an accepted packet.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Opened {
    Pairwise,
    Group([u8; GROUP_ID_LEN]),
}

/// A packet that decrypted successfully under one of our keys, before the
/// friends-list filter. The integrity game audits these.
#[derive(Clone, Debug)]
pub struct Accepted {
    pub sender: PublicKey,
    pub plaintext: Plaintext,
    pub packet: Packet,
    pub id: MessageId,
    pub opened: Opened,
}

/// An accepted packet from a friend, surfaced to the application.
#[derive(Clone, Debug)]
pub struct Delivered {
    pub sender: PublicKey,
    pub payload: AppPayload,
    pub opened: Opened,
}

/// The node owner's private record of what the scheduled slot carried.
#[derive(Clone, Debug)]
pub enum SentKind {
    Real { recipient: Recipient },
    Dummy,
}

#[derive(Clone, Debug)]
pub struct Sent {
    pub id: MessageId,
    pub packet: Packet,
    pub plaintext: Plaintext,
    pub kind: SentKind,
}

#[derive(Debug, Default)]
pub struct TickOutput {
    pub outbound: Vec<Envelope>,
    /// Set when this tick hit a send slot (exactly one MESSAGE per slot).
    pub sent: Option<Sent>,
    pub accepted: Vec<Accepted>,
    pub delivered: Vec<Delivered>,
}

/// One protocol participant.
pub struct NodeState {
    config: NodeConfig,
    turn_ms: u64,
    dummy_pk: PublicKey,
    ds: Digest,
    friends: BTreeMap<PublicKey, FriendEntry>,
    groups: BTreeMap<[u8; GROUP_ID_LEN], GroupKey>,
    outgoing: VecDeque<(Recipient, Plaintext)>,
    pending_requests: BTreeSet<u16>,
    forward_queue: VecDeque<Packet>,
    forwarded: BTreeSet<MessageId>,
    rng_crypto: ChaCha12Rng,
    rng_dummy: ChaCha12Rng,
}

/// Derives an independent named randomness stream from a node seed. Separate
/// streams keep paired security-game worlds aligned: consuming a dummy
/// plaintext must not shift the next ephemeral key.
fn stream(seed: u64, label: &str) -> ChaCha12Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    ChaCha12Rng::from_seed(h.finalize().into())
}

/// Draws just the turn slot for a seed; the simulator uses this to place
/// start times without building whole nodes.
pub fn draw_turn(seed: u64) -> u64 {
    let slots = TURN_WINDOW_MS / TURN_SLOT_MS;
    stream(seed, "turn").gen_range(0..slots) * TURN_SLOT_MS
}

/// Initializes a device: draws its turn uniformly from the window, derives
/// its dummy recipient key, and starts with an empty digest.
pub fn join(seed: u64, config: NodeConfig) -> Result<NodeState, NodeError> {
    if config.send_rate_ms == 0 || config.ds_share_interval_ms == 0 {
        return Err(NodeError::BadConfig("send_rate and ds_share_interval must be positive"));
    }
    if matches!(config.turn_override, Some(t) if t >= TURN_WINDOW_MS) {
        return Err(NodeError::BadConfig("turn must lie inside the turn window"));
    }
    let ds = Digest::new(config.table_size).map_err(|_| NodeError::BadConfig("table size"))?;
    let turn_ms = config.turn_override.unwrap_or_else(|| draw_turn(seed));
    let dummy_pk = crypto::dummy_recipient(&mut stream(seed, "dummy-pk"));
    Ok(NodeState {
        config,
        turn_ms,
        dummy_pk,
        ds,
        friends: BTreeMap::new(),
        groups: BTreeMap::new(),
        outgoing: VecDeque::new(),
        pending_requests: BTreeSet::new(),
        forward_queue: VecDeque::new(),
        forwarded: BTreeSet::new(),
        rng_crypto: stream(seed, "crypto"),
        rng_dummy: stream(seed, "dummy-plaintext"),
    })
}

impl NodeState {
    pub fn config(&self) -> &NodeConfig {
        &self.config
    }

    pub fn turn_ms(&self) -> u64 {
        self.turn_ms
    }

    pub fn public_key(&self) -> PublicKey {
        self.config.keys.public()
    }

    pub fn dummy_recipient(&self) -> PublicKey {
        self.dummy_pk
    }

    pub fn ds(&self) -> &Digest {
        &self.ds
    }

    pub fn friends(&self) -> &BTreeMap<PublicKey, FriendEntry> {
        &self.friends
    }

    pub fn groups(&self) -> &BTreeMap<[u8; GROUP_ID_LEN], GroupKey> {
        &self.groups
    }

    pub fn queue_len(&self) -> usize {
        self.outgoing.len()
    }

    /// Adds a key exchanged in person (web-of-trust depth 0).
    pub fn add_friend(&mut self, pk: PublicKey, may_introduce: bool) {
        self.friends.insert(
            pk,
            FriendEntry {
                may_introduce,
                wot_depth: 0,
            },
        );
    }

    pub fn set_introduction_trust(&mut self, pk: &PublicKey, may_introduce: bool) -> bool {
        match self.friends.get_mut(pk) {
            Some(entry) => {
                entry.may_introduce = may_introduce;
                true
            }
            None => false,
        }
    }

    pub fn add_group(&mut self, key: GroupKey) {
        self.groups.insert(key.group_id, key);
    }

    /// Queues user text. Nothing is transmitted until a send slot comes up,
    /// which is what keeps real messages indistinguishable from cover
    /// traffic.
    pub fn queue_send(&mut self, recipient: Recipient, text: &[u8]) -> Result<(), NodeError> {
        let plaintext = AppPayload::Text(text.to_vec()).to_plaintext()?;
        self.queue_send_plaintext(recipient, plaintext)
    }

    /// Queues an already-framed plaintext (introductions, group setups).
    pub fn queue_send_plaintext(
        &mut self,
        recipient: Recipient,
        plaintext: Plaintext,
    ) -> Result<(), NodeError> {
        match &recipient {
            Recipient::Friend(pk) => {
                if !self.friends.contains_key(pk) {
                    return Err(NodeError::NotAFriend);
                }
            }
            Recipient::Group(id) => {
                if !self.groups.contains_key(id) {
                    return Err(NodeError::UnknownGroup);
                }
            }
        }
        self.outgoing.push_back((recipient, plaintext));
        Ok(())
    }

    /// Builds the two introduction plaintexts a common contact sends to
    /// connect `a` and `b`. Both must already be our friends. The caller
    /// queues each to its recipient.
    pub fn introduce(
        &self,
        a: &PublicKey,
        b: &PublicKey,
    ) -> Result<[(PublicKey, Plaintext); 2], NodeError> {
        if !self.friends.contains_key(a) || !self.friends.contains_key(b) {
            return Err(NodeError::IntroducerMissingParty);
        }
        let to_a = AppPayload::Intro { introduced: *b }.to_plaintext()?;
        let to_b = AppPayload::Intro { introduced: *a }.to_plaintext()?;
        Ok([(*a, to_a), (*b, to_b)])
    }

    /// Creates a group and the setup plaintexts for its direct invitees.
    /// Each direct invitee may carry delegate fingerprints: friends of theirs
    /// they should invite in turn. Flat setup of N members is N messages from
    /// the initiator, so takes about `send_rate * N`; delegation spreads that
    /// across the tree.
    pub fn form_group(
        &mut self,
        invites: &[(PublicKey, Vec<PublicKey>)],
    ) -> Result<Vec<(PublicKey, Plaintext)>, NodeError> {
        for (member, delegates) in invites {
            if !self.friends.contains_key(member) {
                return Err(NodeError::NotAFriend);
            }
            if delegates.len() > MAX_DELEGATES_PER_INVITE {
                return Err(NodeError::TooManyDelegates(delegates.len()));
            }
        }
        let key = GroupKey::generate(&mut self.rng_crypto);
        self.groups.insert(key.group_id, key.clone());
        let mut out = Vec::with_capacity(invites.len());
        for (member, delegates) in invites {
            let payload = AppPayload::GroupSetup {
                key: key.clone(),
                delegates: delegates.iter().map(key_fingerprint).collect(),
            };
            out.push((*member, payload.to_plaintext()?));
        }
        Ok(out)
    }

    /// Distancing phase: drop all protest data. Keys, friends, and groups
    /// persist across protests; stored messages, queues, and the
    /// forwarded-once record do not. Link-layer identity rotation is the
    /// transport's job.
    pub fn distancing_wipe(&mut self) {
        self.ds.wipe();
        self.outgoing.clear();
        self.pending_requests.clear();
        self.forward_queue.clear();
        self.forwarded.clear();
    }

    fn is_send_slot(&self, now_ms: u64, period_ms: u64) -> bool {
        now_ms >= self.turn_ms && (now_ms - self.turn_ms) % period_ms == 0
    }

    /// Runs the control loop once. `now_ms` must not decrease across calls
    /// and should advance on a cadence that divides the configured periods.
    pub fn tick(&mut self, now_ms: u64, inbound: &[Envelope]) -> TickOutput {
        let mut out = TickOutput::default();

        // 1. Scheduled send: one packet per slot, real if queued, dummy
        //    otherwise. Either way the packet joins our own digest.
        if self.is_send_slot(now_ms, self.config.send_rate_ms) {
            let (packet, plaintext, kind) = match self.outgoing.pop_front() {
                Some((recipient, plaintext)) => {
                    let packet = self.encrypt_to(&recipient, &plaintext);
                    (packet, plaintext, SentKind::Real { recipient })
                }
                None => {
                    let plaintext = Plaintext::random(&mut self.rng_dummy);
                    let packet = crypto::signcrypt(
                        &self.config.keys,
                        &self.dummy_pk,
                        &plaintext,
                        &mut self.rng_crypto,
                    );
                    (packet, plaintext, SentKind::Dummy)
                }
            };
            let id = self.ds.add(packet.as_bytes(), now_ms);
            if self.config.broadcast_mode == BroadcastMode::Simple {
                self.forwarded.insert(id);
            }
            out.outbound.push(Envelope::Message(packet.clone()));
            out.sent = Some(Sent {
                id,
                packet,
                plaintext,
                kind,
            });
        }

        // 2. Digest share (smart broadcasting only).
        if self.config.broadcast_mode == BroadcastMode::Smart
            && self.is_send_slot(now_ms, self.config.ds_share_interval_ms)
        {
            out.outbound.push(Envelope::Digest(self.ds.compact()));
        }

        // 3. Diff each arrived digest against ours; request what's missing.
        for env in inbound {
            if let Envelope::Digest(theirs) = env {
                match diff(theirs, &self.ds) {
                    Ok(missing) if !missing.is_empty() => {
                        out.outbound.push(Envelope::Request(missing));
                    }
                    // Size mismatch means protocol divergence; drop silently.
                    _ => {}
                }
            }
        }

        // 4. Union all arrived requests, answer once, deduplicated by id.
        //    Failed lookups (expired or malicious indices) contribute nothing.
        for env in inbound {
            if let Envelope::Request(indices) = env {
                self.pending_requests.extend(indices.iter().copied());
            }
        }
        if !self.pending_requests.is_empty() {
            let mut seen = BTreeSet::new();
            let mut packets = Vec::new();
            for &index in &self.pending_requests {
                for (id, bytes) in self.ds.lookup_by_index(index) {
                    if seen.insert(id) {
                        packets.push(Packet::from_bytes(bytes).expect("stored packets are 255 bytes"));
                    }
                }
            }
            self.pending_requests.clear();
            if !packets.is_empty() {
                out.outbound.push(Envelope::Response(packets));
            }
        }

        // 5. Receive messages and response contents.
        for env in inbound {
            match env {
                Envelope::Message(p) => self.receive_packet(p, now_ms, &mut out),
                Envelope::Response(ps) => {
                    for p in ps {
                        self.receive_packet(p, now_ms, &mut out);
                    }
                }
                _ => {}
            }
        }
        if self.config.broadcast_mode == BroadcastMode::Simple {
            while let Some(p) = self.forward_queue.pop_front() {
                out.outbound.push(Envelope::Message(p));
            }
        }

        // 6. Forget expired messages.
        self.ds.expire_before(now_ms, self.config.time_to_keep_ms);

        out
    }

    fn encrypt_to(&mut self, recipient: &Recipient, plaintext: &Plaintext) -> Packet {
        match recipient {
            Recipient::Friend(pk) => {
                crypto::signcrypt(&self.config.keys, pk, plaintext, &mut self.rng_crypto)
            }
            Recipient::Group(id) => match self.groups.get(id) {
                Some(gk) => {
                    crypto::group_signcrypt(&self.config.keys, gk, plaintext, &mut self.rng_crypto)
                }
                // Group vanished between queue and slot; keep the slot
                // occupied so the trace stays regular.
                None => crypto::signcrypt(
                    &self.config.keys,
                    &self.dummy_pk,
                    &Plaintext::random(&mut self.rng_dummy),
                    &mut self.rng_crypto,
                ),
            },
        }
    }

    fn receive_packet(&mut self, packet: &Packet, now_ms: u64, out: &mut TickOutput) {
        let id = MessageId::of_packet(packet.as_bytes());
        if self.ds.contains(&id) {
            return;
        }
        self.ds.add(packet.as_bytes(), now_ms);

        let opened = self.try_open(packet);
        if let Some((sender, plaintext, opened)) = opened {
            out.accepted.push(Accepted {
                sender,
                plaintext: plaintext.clone(),
                packet: packet.clone(),
                id,
                opened,
            });
            // Messages from strangers decrypt but are never surfaced.
            if self.friends.contains_key(&sender) {
                if let Some(payload) = plaintext.content().and_then(AppPayload::decode) {
                    self.handle_control(&sender, &payload);
                    out.delivered.push(Delivered {
                        sender,
                        payload,
                        opened,
                    });
                }
            }
        }

        if self.config.broadcast_mode == BroadcastMode::Simple && !self.forwarded.contains(&id) {
            self.forwarded.insert(id);
            self.forward_queue.push_back(packet.clone());
        }
    }

    fn try_open(&self, packet: &Packet) -> Option<(PublicKey, Plaintext, Opened)> {
        if let Some((sender, plaintext)) =
            designcrypt_with(self.config.backend, &self.config.keys, packet.as_bytes())
        {
            return Some((sender, plaintext, Opened::Pairwise));
        }
        for (gid, gk) in &self.groups {
            if let Some((sender, plaintext)) = group_designcrypt(gk, packet.as_bytes()) {
                return Some((sender, plaintext, Opened::Group(*gid)));
            }
        }
        None
    }

    fn handle_control(&mut self, sender: &PublicKey, payload: &AppPayload) {
        match payload {
            AppPayload::Text(_) => {}
            AppPayload::Intro { introduced } => {
                let entry = self.friends[sender];
                let depth = entry.wot_depth.saturating_add(1);
                if entry.may_introduce && depth <= self.config.wot_hop_limit {
                    self.friends.entry(*introduced).or_insert(FriendEntry {
                        may_introduce: false,
                        wot_depth: depth,
                    });
                }
            }
            AppPayload::GroupSetup { key, delegates } => {
                self.groups.insert(key.group_id, key.clone());
                // Resolve delegate fingerprints against our own friends and
                // pass the key along; unknown fingerprints are dead branches.
                let targets: Vec<PublicKey> = self
                    .friends
                    .keys()
                    .filter(|pk| delegates.contains(&key_fingerprint(pk)))
                    .copied()
                    .collect();
                for pk in targets {
                    let payload = AppPayload::GroupSetup {
                        key: key.clone(),
                        delegates: Vec::new(),
                    };
                    if let Ok(pt) = payload.to_plaintext() {
                        let _ = self.queue_send_plaintext(Recipient::Friend(pk), pt);
                    }
                }
            }
        }
    }
}

impl std::fmt::Debug for NodeState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "NodeState(pk={}, turn={}ms, ds={}, queue={})",
            &self.public_key().to_hex()[..12],
            self.turn_ms,
            self.ds.len(),
            self.outgoing.len()
        )
    }
}
