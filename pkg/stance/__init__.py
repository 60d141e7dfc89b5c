"""Пакет обнаружения позиции в разговорных тредах (аннотации LLM + реляционные графы)."""
