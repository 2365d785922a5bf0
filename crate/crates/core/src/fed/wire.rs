use crate::error::{Error, Result};
use crate::privacy::NoisyGradient;

const TAG_GRADIENT: u8 = 0;
const TAG_STOP: u8 = 1;
const HEADER: usize = 17;

/// What a client sends the server in one round.
#[derive(Clone, Debug, PartialEq)]
pub enum ClientMessage {
    Gradient { client: usize, round: usize, gradient: NoisyGradient },
    Stop { client: usize, round: usize },
}

impl ClientMessage {
    pub fn client(&self) -> usize {
        match self {
            ClientMessage::Gradient { client, .. } | ClientMessage::Stop { client, .. } => *client,
        }
    }

    /// Tag byte, client and round as little-endian `u64`, then the payload.
    pub fn encode(&self) -> Vec<u8> {
        let (tag, client, round, payload) = match self {
            ClientMessage::Gradient { client, round, gradient } => (TAG_GRADIENT, client, round, gradient.to_bytes()),
            ClientMessage::Stop { client, round } => (TAG_STOP, client, round, Vec::new()),
        };
        let mut out = Vec::with_capacity(HEADER + payload.len());
        out.push(tag);
        out.extend_from_slice(&(*client as u64).to_le_bytes());
        out.extend_from_slice(&(*round as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER {
            return Err(Error::Data(format!("client message of {} bytes is shorter than its header", bytes.len())));
        }
        let word = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().expect("8 bytes")) as usize;
        let (client, round) = (word(1), word(9));
        match bytes[0] {
            TAG_GRADIENT => {
                Ok(ClientMessage::Gradient { client, round, gradient: NoisyGradient::from_bytes(&bytes[HEADER..])? })
            }
            TAG_STOP if bytes.len() == HEADER => Ok(ClientMessage::Stop { client, round }),
            tag => Err(Error::Data(format!("unknown client message tag {tag}"))),
        }
    }
}

/// Gradient payload of an encoded message, if it carries one.
pub fn payload_values(bytes: &[u8]) -> Option<Vec<f64>> {
    match ClientMessage::decode(bytes).ok()? {
        ClientMessage::Gradient { gradient, .. } => Some(gradient.values().to_vec()),
        ClientMessage::Stop { .. } => None,
    }
}
