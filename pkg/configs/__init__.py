# Config module

