"""
DeepCAM - coordinated household activity generation.

Person attributes are embedded, aligned to household role positions by the
role-match attention, contextualised across members by a person-axis
encoder, and decoded autoregressively over the 96 slots. Each decoder block
runs causal self-attention along time (with cross-attention to the head's
day) followed by attention across members at the same slot, so slot t of
every member is predicted jointly from all members' slots < t.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import torch
from torch import nn

from models.schedule import N_CODES, N_SLOTS, PAD_CODE
from utils.config import ModelConfig
from utils.errors import DegenerateMaskError, NumericFaultError
from utils.rng import seed_torch

logger = logging.getLogger(__name__)

BOS_CODE = N_CODES  # decoder start token, never predicted


@dataclass
class Batch:
    """Training batch with ground-truth grids; person 0 is the household head"""

    head_grid: torch.Tensor  # [B, 96] long
    member_grids: torch.Tensor  # [B, P, 96] long, PAD for masked persons
    person_features: torch.Tensor  # [B, P, F]
    valid_mask: torch.Tensor  # [B, P] bool

    @property
    def size(self) -> int:
        return int(self.head_grid.shape[0])

    @property
    def n_persons(self) -> int:
        return int(self.member_grids.shape[1])

    def to(self, dtype: torch.dtype) -> "Batch":
        return Batch(self.head_grid, self.member_grids, self.person_features.to(dtype), self.valid_mask)


def check_finite(tensor: torch.Tensor, layer: str) -> torch.Tensor:
    if not torch.isfinite(tensor).all():
        raise NumericFaultError(f"Non-finite activation in {layer}", layer=layer)
    return tensor


# =========================
# ROLE-MATCH ATTENTION
# =========================
def compute_role_match_attention(
    attr_embed: torch.Tensor,
    role_queries: torch.Tensor,
    mask: torch.Tensor,
    gamma: float,
    tau: float,
    value: Optional[nn.Module] = None,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Align member attribute embeddings [B, P, E] to role positions.

    logits = Q . attr^T / (tau * sqrt(E)) + gamma * I, masked columns -inf,
    row softmax, output = attn . value(attr) + attr, masked rows zero.
    Returns (refined features, attention map [B, P, P]).
    """
    if attr_embed.dim() == 2:
        refined, attn = compute_role_match_attention(
            attr_embed.unsqueeze(0), role_queries, mask.unsqueeze(0), gamma, tau, value
        )
        return refined[0], attn[0]

    if not mask.any(dim=1).all():
        raise DegenerateMaskError("Every person of a household is masked")

    n_persons, embed_dim = attr_embed.shape[1], attr_embed.shape[2]
    queries = role_queries[:n_persons]
    logits = torch.einsum("pe,bqe->bpq", queries, attr_embed) / (tau * math.sqrt(embed_dim))
    eye = torch.eye(n_persons, dtype=logits.dtype, device=logits.device)
    logits = logits + gamma * eye
    logits = logits.masked_fill(~mask[:, None, :], float("-inf"))
    attn = torch.softmax(logits, dim=-1)

    values = value(attr_embed) if value is not None else attr_embed
    refined = torch.bmm(attn, values) + attr_embed
    refined = refined * mask[..., None].to(refined.dtype)
    return refined, attn


class RoleMatchAttention(nn.Module):
    def __init__(self, embed_dim: int, p_max: int, gamma: float, tau: float):
        super().__init__()
        self.role_queries = nn.Parameter(torch.randn(p_max, embed_dim) / math.sqrt(embed_dim))
        self.value = nn.Linear(embed_dim, embed_dim)
        self.gamma = gamma
        self.tau = tau

    def forward(self, attr_embed: torch.Tensor, mask: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        return compute_role_match_attention(attr_embed, self.role_queries, mask, self.gamma, self.tau, self.value)


# =========================
# NETWORK
# =========================
class DeepCAM(nn.Module):
    """Household schedule generator producing logits [B, 96, P, 16]"""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        embed_dim = config.embed_dim

        # Step 1: person context
        self.attr_embed = nn.Linear(config.n_features, embed_dim)
        self.role_match = RoleMatchAttention(
            embed_dim, config.p_max, config.diag_bias_strength, config.match_temperature
        )
        self.person_encoder = nn.TransformerEncoder(
            self._encoder_layer(config),
            num_layers=config.n_encoder_layers,
            enable_nested_tensor=False,
        )

        # Step 2: activity tokens
        self.code_embed = nn.Embedding(N_CODES + 1, embed_dim)
        self.time_embed = nn.Embedding(N_SLOTS, embed_dim)

        # Step 3: decoder blocks (time axis, then member axis)
        self.time_layers = nn.ModuleList(
            [
                nn.TransformerDecoderLayer(
                    embed_dim,
                    config.n_heads,
                    dim_feedforward=config.ffn_dim,
                    dropout=config.dropout,
                    activation="gelu",
                    batch_first=True,
                )
                for _ in range(config.n_decoder_layers)
            ]
        )
        self.member_layers = nn.ModuleList([self._encoder_layer(config) for _ in range(config.n_decoder_layers)])

        # Step 4: output head over [decoder state ; person embedding]
        self.output_head = nn.Sequential(
            nn.Linear(2 * embed_dim, config.ffn_dim),
            nn.GELU(),
            nn.Linear(config.ffn_dim, N_CODES),
        )
        self.register_buffer("causal_mask", nn.Transformer.generate_square_subsequent_mask(N_SLOTS), persistent=False)

    @staticmethod
    def _encoder_layer(config: ModelConfig) -> nn.TransformerEncoderLayer:
        return nn.TransformerEncoderLayer(
            config.embed_dim,
            config.n_heads,
            dim_feedforward=config.ffn_dim,
            dropout=config.dropout,
            activation="gelu",
            batch_first=True,
        )

    def _context(self, batch: Batch) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Attribute embeddings and encoded context [B, P, E], head memory [B, 96, E]"""
        mask = batch.valid_mask
        if mask.shape[1] > self.config.p_max:
            raise ValueError(f"Batch has {mask.shape[1]} persons, model supports {self.config.p_max}")
        dtype = self.attr_embed.weight.dtype
        keep = mask[..., None]
        zero = torch.zeros((), dtype=dtype, device=mask.device)

        # attribute embedding and role alignment
        attr = torch.where(keep, self.attr_embed(batch.person_features.to(dtype)), zero)
        check_finite(attr, "attribute_embedding")
        refined, _ = self.role_match(attr, mask)
        check_finite(refined, "role_match_attention")

        context = torch.where(keep, self.person_encoder(refined, src_key_padding_mask=~mask), zero)
        check_finite(context, "person_encoder")

        # head memory: the head's full day is known
        slots = torch.arange(N_SLOTS, device=mask.device)
        memory = self.code_embed(batch.head_grid) + self.time_embed(slots)[None]
        return attr, context, memory

    def forward(self, batch: Batch) -> torch.Tensor:
        mask = batch.valid_mask
        n_batch, n_persons = mask.shape
        attr, context, memory = self._context(batch)
        keep = mask[..., None]
        zero = torch.zeros((), dtype=attr.dtype, device=mask.device)
        padding = ~mask
        slots = torch.arange(N_SLOTS, device=mask.device)

        # shifted-right member tokens plus each member's context
        bos = torch.full((n_batch, n_persons, 1), BOS_CODE, dtype=torch.long, device=mask.device)
        shifted = torch.cat([bos, batch.member_grids[..., :-1]], dim=-1)
        tokens = self.code_embed(shifted) + self.time_embed(slots)[None, None] + context[:, :, None, :]
        embed_dim = tokens.shape[-1]

        memory_per_person = memory[:, None].expand(n_batch, n_persons, N_SLOTS, embed_dim)
        memory_per_person = memory_per_person.reshape(n_batch * n_persons, N_SLOTS, embed_dim)
        member_padding = padding[:, None, :].expand(n_batch, N_SLOTS, n_persons).reshape(n_batch * N_SLOTS, n_persons)
        causal = self.causal_mask.to(attr.dtype)

        hidden = tokens
        for time_layer, member_layer in zip(self.time_layers, self.member_layers):
            seq = hidden.reshape(n_batch * n_persons, N_SLOTS, embed_dim)
            seq = time_layer(seq, memory_per_person, tgt_mask=causal, tgt_is_causal=True)
            hidden = seq.reshape(n_batch, n_persons, N_SLOTS, embed_dim)

            across = hidden.transpose(1, 2).reshape(n_batch * N_SLOTS, n_persons, embed_dim)
            across = member_layer(across, src_key_padding_mask=member_padding)
            hidden = across.reshape(n_batch, N_SLOTS, n_persons, embed_dim).transpose(1, 2)
            hidden = torch.where(keep[:, :, None, :], hidden, zero)
        check_finite(hidden, "decoder")

        features = torch.cat([hidden, attr[:, :, None, :].expand_as(hidden)], dim=-1)
        logits = self.output_head(features).transpose(1, 2)  # [B, 96, P, 16]
        check_finite(logits, "output_head")
        return mask_logits(logits, mask)

    # =========================
    # INCREMENTAL DECODING
    # =========================
    def start_decoding(self, batch: Batch) -> "DecodeState":
        """Context for slot-by-slot decoding; member_grids of the batch are not read"""
        attr, context, memory = self._context(batch)
        n_batch, n_persons = batch.valid_mask.shape
        memory_per_person = memory[:, None].expand(n_batch, n_persons, N_SLOTS, memory.shape[-1])
        return DecodeState(
            attr=attr,
            context=context,
            memory=memory_per_person.reshape(n_batch * n_persons, N_SLOTS, memory.shape[-1]),
            mask=batch.valid_mask,
            prefixes=[None] * len(self.time_layers),
        )

    @staticmethod
    def _time_step(layer: nn.TransformerDecoderLayer, x: torch.Tensor, prefix: torch.Tensor,
                   memory: torch.Tensor) -> torch.Tensor:
        """Post-norm decoder layer for the newest position only, attending over its cached prefix"""
        attended = layer.self_attn(x, prefix, prefix, need_weights=False)[0]
        x = layer.norm1(x + layer.dropout1(attended))
        crossed = layer.multihead_attn(x, memory, memory, need_weights=False)[0]
        x = layer.norm2(x + layer.dropout2(crossed))
        return layer.norm3(x + layer.dropout3(layer.linear2(layer.dropout(layer.activation(layer.linear1(x))))))

    def decode_step(self, state: "DecodeState", previous_codes: Optional[torch.Tensor] = None) -> torch.Tensor:
        """
        Logits [B, P, 16] for the next slot. previous_codes [B, P] are every
        member's codes at the slot before; None at slot 0. Matches forward()
        at that slot for the same member codes.
        """
        t = state.slot
        if t >= N_SLOTS:
            raise ValueError("All 96 slots are already decoded")
        mask = state.mask
        n_batch, n_persons = mask.shape
        keep = mask[..., None]
        zero = torch.zeros((), dtype=state.attr.dtype, device=mask.device)
        if previous_codes is None:
            previous_codes = torch.full((n_batch, n_persons), BOS_CODE, dtype=torch.long, device=mask.device)
        slot = torch.full((), t, dtype=torch.long, device=mask.device)
        hidden = self.code_embed(previous_codes) + self.time_embed(slot) + state.context
        embed_dim = hidden.shape[-1]

        for i, (time_layer, member_layer) in enumerate(zip(self.time_layers, self.member_layers)):
            x = hidden.reshape(n_batch * n_persons, 1, embed_dim)
            prefix = x if state.prefixes[i] is None else torch.cat([state.prefixes[i], x], dim=1)
            state.prefixes[i] = prefix
            x = self._time_step(time_layer, x, prefix, state.memory)
            across = member_layer(x.reshape(n_batch, n_persons, embed_dim), src_key_padding_mask=~mask)
            hidden = torch.where(keep, across, zero)
        check_finite(hidden, "decoder")

        logits = self.output_head(torch.cat([hidden, state.attr], dim=-1))
        check_finite(logits, "output_head")
        state.slot += 1
        return mask_logits(logits[:, None], mask)[:, 0]


@dataclass
class DecodeState:
    """Per-batch cache of decoder-layer inputs for the slots decoded so far"""

    attr: torch.Tensor  # [B, P, E]
    context: torch.Tensor  # [B, P, E]
    memory: torch.Tensor  # [B*P, 96, E]
    mask: torch.Tensor  # [B, P] bool
    prefixes: List[Optional[torch.Tensor]]  # per layer [B*P, t, E]
    slot: int = 0


def mask_logits(logits: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Masked persons: PAD logit 0, everything else -inf. Valid persons never emit PAD."""
    neg_inf = torch.tensor(float("-inf"), dtype=logits.dtype, device=logits.device)
    is_pad = torch.zeros(N_CODES, dtype=torch.bool, device=logits.device)
    is_pad[PAD_CODE] = True
    valid = mask[:, None, :, None]
    masked_row = torch.where(is_pad, torch.zeros((), dtype=logits.dtype), neg_inf).expand_as(logits)
    valid_row = logits.masked_fill(is_pad, float("-inf"))
    return torch.where(valid, valid_row, masked_row)


def build_model(config: ModelConfig, seed: Optional[int] = None, dtype: torch.dtype = torch.float32) -> DeepCAM:
    """Construct DeepCAM with weights initialised from seed"""
    if seed is not None:
        seed_torch(seed)
    model = DeepCAM(config).to(dtype)
    n_params = sum(p.numel() for p in model.parameters())
    logger.debug(f"DeepCAM built with {n_params} parameters")
    return model
