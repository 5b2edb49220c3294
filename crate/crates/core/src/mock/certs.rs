use rcgen::{
    BasicConstraints, CertificateParams, CustomExtension, DnType, IsCa, KeyPair, KeyUsagePurpose,
};
use rustls::pki_types::{CertificateDer, PrivateKeyDer, PrivatePkcs8KeyDer};

/// Private-enterprise OID carrying filler bytes in the leaf certificate.
const PADDING_OID: &[u64] = &[1, 3, 6, 1, 4, 1, 62_537, 1];

/// Names the mock's leaf certificate is valid for.
pub const MOCK_SANS: [&str; 4] = ["localhost", "127.0.0.1", "::1", "127.0.0.2"];

/// A throwaway CA and a leaf signed by it.
#[derive(Debug)]
pub struct MockPki {
    pub ca_der: CertificateDer<'static>,
    pub chain: Vec<CertificateDer<'static>>,
    key_der: Vec<u8>,
}

impl MockPki {
    pub fn key(&self) -> PrivateKeyDer<'static> {
        PrivateKeyDer::Pkcs8(PrivatePkcs8KeyDer::from(self.key_der.clone()))
    }

    /// Bytes of certificate data the server sends in a full handshake.
    pub fn chain_bytes(&self) -> usize {
        self.chain.iter().map(|c| c.len()).sum()
    }
}

fn der_octet_string(len: usize) -> Vec<u8> {
    let mut out = vec![0x04];
    if len < 0x80 {
        out.push(len as u8);
    } else {
        let bytes = (len as u64).to_be_bytes();
        let first = bytes.iter().position(|b| *b != 0).unwrap_or(7);
        out.push(0x80 | (8 - first) as u8);
        out.extend_from_slice(&bytes[first..]);
    }
    out.resize(out.len() + len, 0);
    out
}

/// Generates the PKI. `padding` bytes are embedded in a non-critical
/// extension of the leaf, growing the certificate flight by as much.
pub fn generate(padding: usize) -> Result<MockPki, rcgen::Error> {
    let ca_key = KeyPair::generate()?;
    let mut ca_params = CertificateParams::new(Vec::<String>::new())?;
    ca_params.is_ca = IsCa::Ca(BasicConstraints::Unconstrained);
    ca_params
        .distinguished_name
        .push(DnType::CommonName, "doxbench mock CA");
    ca_params.key_usages = vec![KeyUsagePurpose::KeyCertSign, KeyUsagePurpose::CrlSign];
    let ca = ca_params.self_signed(&ca_key)?;

    let leaf_key = KeyPair::generate()?;
    let mut leaf_params =
        CertificateParams::new(MOCK_SANS.iter().map(|s| s.to_string()).collect::<Vec<_>>())?;
    leaf_params
        .distinguished_name
        .push(DnType::CommonName, "doxbench mock resolver");
    if padding > 0 {
        leaf_params
            .custom_extensions
            .push(CustomExtension::from_oid_content(
                PADDING_OID,
                der_octet_string(padding),
            ));
    }
    let leaf = leaf_params.signed_by(&leaf_key, &ca, &ca_key)?;
    Ok(MockPki {
        ca_der: ca.der().clone(),
        chain: vec![leaf.der().clone(), ca.der().clone()],
        key_der: leaf_key.serialize_der(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn padding_grows_the_chain() {
        let small = generate(0).unwrap();
        let big = generate(5000).unwrap();
        let grown = big.chain_bytes() - small.chain_bytes();
        assert!((5000..5100).contains(&grown), "grew by {grown}");
    }

    #[test]
    fn der_length_forms() {
        assert_eq!(&der_octet_string(3)[..2], &[0x04, 3]);
        assert_eq!(&der_octet_string(300)[..4], &[0x04, 0x82, 0x01, 0x2C]);
        assert_eq!(der_octet_string(300).len(), 304);
    }
}
