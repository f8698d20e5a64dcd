"""Result emitters"""
